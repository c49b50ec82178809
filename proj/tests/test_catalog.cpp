#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "uavdesign/catalog.hpp"
#include "uavdesign/error.hpp"

using namespace uav;
using testing::bundled_catalog;
using testing::tiny_catalog;
using testing::tiny_records;

namespace {

ErrorCode load_error(const std::string& text) {
  std::istringstream in(text);
  try {
    Catalog::load(in);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected load to throw");
  return ErrorCode::Io;
}

std::string error_message(const std::string& text) {
  std::istringstream in(text);
  try {
    Catalog::load(in);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("bundled catalog has the full-size vocabularies") {
  const Catalog& cat = bundled_catalog();
  CHECK(cat.key_classes() == 18);
  CHECK(cat.value_vocab().size() == 671);
  CHECK(cat.attribute_schema().size() == 51);
  CHECK(cat.value_vocab().front() == Catalog::kNumericValue);
  for (const char* id : {"t_motor_MN2212KV780", "apc_propellers_12x5", "t_motor_T_80A", "TurnigyGraphene1400mAh3S75C"}) {
    CHECK(cat.find(id) != nullptr);
  }
  CHECK(cat.at("t_motor_T_80A").kind == ComponentKind::Esc);
  CHECK_THROWS_AS(cat.at("no_such_part"), Error);
}

TEST_CASE("value vocabulary index is a bijection") {
  const Catalog& cat = bundled_catalog();
  auto vocab = cat.value_vocab();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto idx = cat.value_index(vocab[i]);
    REQUIRE(idx);
    CHECK(*idx == static_cast<int>(i));
  }
  CHECK_FALSE(cat.value_index("definitely-not-a-value"));
  for (const auto& rec : cat.records()) CHECK(cat.value_index(rec.id));
  for (const auto& lit : node_type_literals()) CHECK(cat.value_index(lit));
}

TEST_CASE("records are sorted by id") {
  auto recs = bundled_catalog().records();
  CHECK(std::is_sorted(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.id < b.id; }));
}

TEST_CASE("attribute vectors use min-max scaling at global slots") {
  const Catalog& cat = bundled_catalog();
  const std::size_t slots = cat.attribute_schema().size();
  for (ComponentKind kind : {ComponentKind::Motor, ComponentKind::Propeller, ComponentKind::Esc, ComponentKind::Battery}) {
    auto parts = cat.of_kind(kind);
    REQUIRE_FALSE(parts.empty());
    auto names = required_attributes(kind);
    auto kind_slots = cat.attribute_slots_of(kind);
    REQUIRE(kind_slots.size() == names.size());
    for (std::size_t a = 0; a < names.size(); ++a) {
      std::string expected = std::string(kind_name(kind)) + "." + std::string(names[a]);
      CHECK(cat.attribute_schema()[static_cast<std::size_t>(kind_slots[a])] == expected);
    }
    // Independent min/max recount per attribute.
    for (std::size_t a = 0; a < names.size(); ++a) {
      std::string name(names[a]);
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto* p : parts) {
        lo = std::min(lo, p->attr(name));
        hi = std::max(hi, p->attr(name));
      }
      for (const auto* p : parts) {
        auto v = cat.attribute_vector(p->id);
        REQUIRE(v.size() == slots);
        double want = hi > lo ? (p->attr(name) - lo) / (hi - lo) : 1.0;
        CHECK(v[static_cast<std::size_t>(kind_slots[a])] == doctest::Approx(want).epsilon(1e-15));
      }
    }
    for (const auto* p : parts) {
      auto v = cat.attribute_vector(p->id);
      for (std::size_t s = 0; s < slots; ++s) {
        bool own = std::find(kind_slots.begin(), kind_slots.end(), static_cast<int>(s)) != kind_slots.end();
        if (!own) CHECK(v[s] == 0.0);
        CHECK(v[s] >= 0.0);
        CHECK(v[s] <= 1.0);
      }
    }
  }
  CHECK_THROWS_AS(cat.attribute_vector("nope"), Error);
}

TEST_CASE("two motors differ only within motor slots") {
  const Catalog& cat = bundled_catalog();
  auto motors = cat.of_kind(ComponentKind::Motor);
  auto motor_slots = cat.attribute_slots_of(ComponentKind::Motor);
  for (std::size_t i = 0; i + 1 < motors.size(); i += 7) {
    auto a = cat.attribute_vector(motors[i]->id);
    auto b = cat.attribute_vector(motors[i + 1]->id);
    for (std::size_t s = 0; s < a.size(); ++s) {
      if (a[s] != b[s]) {
        CHECK(std::find(motor_slots.begin(), motor_slots.end(), static_cast<int>(s)) != motor_slots.end());
      }
    }
  }
}

TEST_CASE("save then load is the identity and preserves the hash") {
  for (const Catalog* cat : {&bundled_catalog(), &tiny_catalog()}) {
    std::ostringstream out;
    cat->save(out);
    std::istringstream in(out.str());
    Catalog back = Catalog::load(in);
    CHECK(back == *cat);
    CHECK(back.content_hash() == cat->content_hash());
    CHECK(std::equal(back.attribute_schema().begin(), back.attribute_schema().end(),
                     cat->attribute_schema().begin(), cat->attribute_schema().end()));
    CHECK(std::equal(back.value_vocab().begin(), back.value_vocab().end(), cat->value_vocab().begin(),
                     cat->value_vocab().end()));
  }
}

TEST_CASE("content hash ignores record order but not values") {
  auto recs = tiny_records();
  std::reverse(recs.begin(), recs.end());
  Catalog reversed(recs);
  CHECK(reversed.content_hash() == tiny_catalog().content_hash());
  recs[0].attributes.begin()->second += 1.0;
  CHECK(Catalog(recs).content_hash() != tiny_catalog().content_hash());
  CHECK(hash_hex(tiny_catalog().content_hash()).size() == 64);
}

TEST_CASE("empty catalog") {
  std::istringstream in("");
  Catalog cat = Catalog::load(in);
  CHECK(cat.empty());
  CHECK(cat.value_vocab().empty());
  CHECK(cat.attribute_schema().empty());
}

TEST_CASE("load errors") {
  const std::string esc = R"({"id":"t_motor_T_80A","kind":"ESC","attributes":{"max_current_A":80,"mass_g":48}})";
  CHECK(load_error(esc + "\n" + esc + "\n") == ErrorCode::DuplicateId);
  CHECK(load_error(R"({"id":"x","kind":"ESC","attributes":{"max_current_A":80}})") == ErrorCode::Parse);
  CHECK(load_error(R"({"id":"x","kind":"Rotor","attributes":{}})") == ErrorCode::Parse);
  CHECK(load_error(R"({"id":"x","kind":"ESC","attributes":{"max_current_A":80,"mass_g":48,"colour":1}})") ==
        ErrorCode::Parse);
  CHECK(load_error(R"({"id":"x","kind":"ESC","attributes":{"max_current_A":-1,"mass_g":48}})") == ErrorCode::Parse);
  CHECK(load_error(esc + "\n{not json\n") == ErrorCode::Parse);
  CHECK(error_message(esc + "\n\n{not json\n").find("line 3") != std::string::npos);

  auto recs = tiny_records();
  recs[0].attributes["mass_g"] = std::numeric_limits<double>::quiet_NaN();
  try {
    Catalog bad(recs);
    FAIL("expected NonFiniteAttribute");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteAttribute);
  }
}

TEST_CASE("configured dimensions must cover the catalog") {
  CHECK_THROWS_AS(Catalog(tiny_records(), {18, 3, 51}), Error);
  CHECK_THROWS_AS(Catalog(tiny_records(), {18, 0, 10}), Error);
  CHECK_THROWS_AS(Catalog(tiny_records(), {12, 0, 0}), Error);
  Catalog padded(tiny_records(), {18, 100, 51});
  CHECK(padded.value_vocab().size() == 100);
  CHECK(padded.attribute_schema().size() == 51);
  CHECK(padded.key_classes() == 18);
  CHECK(tiny_catalog().value_vocab().size() == 1 + 27 + 5);
  CHECK(tiny_catalog().attribute_schema().size() == 15);
}
