#include "uavdesign/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "uavdesign/error.hpp"
#include "uavdesign/io.hpp"

namespace uav {

namespace {

using json = nlohmann::json;

constexpr std::array<std::string_view, 4> kMotorAttrs = {"kv_rpm_per_volt", "mass_g", "max_current_A",
                                                         "resistance_ohm"};
constexpr std::array<std::string_view, 5> kPropAttrs = {"diameter_in", "mass_g", "pitch_in", "power_coeff_Cp",
                                                        "thrust_coeff_Ct"};
constexpr std::array<std::string_view, 2> kEscAttrs = {"mass_g", "max_current_A"};
constexpr std::array<std::string_view, 4> kBatteryAttrs = {"capacity_mAh", "mass_g", "max_discharge_C", "voltage_V"};

constexpr std::array kAllKinds = {ComponentKind::Motor, ComponentKind::Propeller, ComponentKind::Esc,
                                  ComponentKind::Battery};

std::string line_context(std::size_t line) { return "catalog line " + std::to_string(line) + ": "; }

ComponentRecord parse_record(const json& j, std::size_t line) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, line_context(line) + "record must be an object");
  for (const auto& [field, _] : j.items()) {
    if (field != "id" && field != "kind" && field != "attributes") {
      throw Error(ErrorCode::Parse, line_context(line) + "unknown field '" + field + "'");
    }
  }
  if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
    throw Error(ErrorCode::Parse, line_context(line) + "missing string field 'id'");
  }
  ComponentRecord rec;
  rec.id = j["id"].get<std::string>();
  if (!j.contains("kind") || !j["kind"].is_string()) {
    throw Error(ErrorCode::Parse, line_context(line) + "record '" + rec.id + "' is missing 'kind'");
  }
  auto kind = kind_from_name(j["kind"].get<std::string>());
  if (!kind) {
    throw Error(ErrorCode::Parse,
                line_context(line) + "record '" + rec.id + "' has unknown kind '" + j["kind"].get<std::string>() + "'");
  }
  rec.kind = *kind;
  if (!j.contains("attributes") || !j["attributes"].is_object()) {
    throw Error(ErrorCode::Parse, line_context(line) + "record '" + rec.id + "' is missing 'attributes'");
  }
  for (const auto& [name, value] : j["attributes"].items()) {
    if (!value.is_number()) {
      throw Error(ErrorCode::Parse, line_context(line) + "attribute '" + name + "' of '" + rec.id + "' is not a number");
    }
    rec.attributes.emplace(name, value.get<double>());
  }
  return rec;
}

void check_record(const ComponentRecord& rec) {
  auto required = required_attributes(rec.kind);
  for (std::string_view name : required) {
    if (!rec.attributes.contains(std::string(name))) {
      throw Error(ErrorCode::Parse, "record '" + rec.id + "' lacks attribute '" + std::string(name) + "'");
    }
  }
  for (const auto& [name, value] : rec.attributes) {
    if (std::find(required.begin(), required.end(), name) == required.end()) {
      throw Error(ErrorCode::Parse, "record '" + rec.id + "' has unknown attribute '" + name + "' for kind " +
                                        std::string(kind_name(rec.kind)));
    }
    if (!std::isfinite(value)) {
      throw Error(ErrorCode::NonFiniteAttribute, "record '" + rec.id + "' attribute '" + name + "' is not finite");
    }
    if (value <= 0.0) {
      throw Error(ErrorCode::Parse, "record '" + rec.id + "' attribute '" + name + "' must be > 0");
    }
  }
}

}  // namespace

std::string_view kind_name(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::Motor: return "Motor";
    case ComponentKind::Propeller: return "Propeller";
    case ComponentKind::Esc: return "ESC";
    case ComponentKind::Battery: return "Battery";
  }
  return "";
}

std::optional<ComponentKind> kind_from_name(std::string_view name) {
  for (ComponentKind k : kAllKinds) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

std::span<const std::string_view> required_attributes(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::Motor: return kMotorAttrs;
    case ComponentKind::Propeller: return kPropAttrs;
    case ComponentKind::Esc: return kEscAttrs;
    case ComponentKind::Battery: return kBatteryAttrs;
  }
  return {};
}

double ComponentRecord::attr(std::string_view name) const {
  auto it = attributes.find(std::string(name));
  if (it == attributes.end()) {
    throw Error(ErrorCode::UnknownId, "component '" + id + "' has no attribute '" + std::string(name) + "'");
  }
  return it->second;
}

Catalog::Catalog(std::vector<ComponentRecord> records, CatalogDimensions dims)
    : records_(std::move(records)), dims_(dims) {
  std::sort(records_.begin(), records_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < records_.size(); ++i) {
    if (records_[i].id == records_[i - 1].id) {
      throw Error(ErrorCode::DuplicateId, "duplicate component id '" + records_[i].id + "'");
    }
  }
  for (const auto& rec : records_) check_record(rec);
  build();
}

void Catalog::build() {
  if (dims_.key_classes != 0 && dims_.key_classes < kParamKeyCount) {
    throw Error(ErrorCode::Config, "key_classes " + std::to_string(dims_.key_classes) + " is below the " +
                                       std::to_string(kParamKeyCount) + " grammar keys");
  }
  key_classes_ = dims_.key_classes != 0 ? dims_.key_classes : kParamKeyCount;

  for (std::size_t i = 0; i < records_.size(); ++i) by_id_.emplace(records_[i].id, i);

  if (records_.empty()) {
    std::ostringstream canonical;
    save(canonical);
    hash_ = sha256(canonical.str());
    return;
  }

  value_vocab_.emplace_back(kNumericValue);
  for (auto& lit : node_type_literals()) value_vocab_.push_back(std::move(lit));
  for (const auto& rec : records_) value_vocab_.push_back(rec.id);
  if (dims_.value_classes != 0) {
    if (dims_.value_classes < static_cast<int>(value_vocab_.size())) {
      throw Error(ErrorCode::Config, "value_classes " + std::to_string(dims_.value_classes) + " is below the " +
                                         std::to_string(value_vocab_.size()) + " values this catalog defines");
    }
    for (int i = static_cast<int>(value_vocab_.size()); i < dims_.value_classes; ++i) {
      value_vocab_.push_back("<reserved:" + std::to_string(i) + ">");
    }
  }
  for (std::size_t i = 0; i < value_vocab_.size(); ++i) value_index_.emplace(value_vocab_[i], static_cast<int>(i));

  for (ComponentKind kind : kAllKinds) {
    for (std::string_view name : required_attributes(kind)) {
      kind_slots_[static_cast<std::size_t>(kind)].push_back(static_cast<int>(attribute_schema_.size()));
      attribute_schema_.push_back(std::string(kind_name(kind)) + "." + std::string(name));
    }
  }
  if (dims_.attribute_slots != 0) {
    if (dims_.attribute_slots < static_cast<int>(attribute_schema_.size())) {
      throw Error(ErrorCode::Config, "attribute_slots " + std::to_string(dims_.attribute_slots) +
                                         " is below the " + std::to_string(attribute_schema_.size()) +
                                         " physical attributes");
    }
    for (int i = static_cast<int>(attribute_schema_.size()); i < dims_.attribute_slots; ++i) {
      attribute_schema_.push_back("reserved." + std::to_string(i));
    }
  }

  const std::size_t slots = attribute_schema_.size();
  slot_min_.assign(slots, 0.0);
  slot_max_.assign(slots, 0.0);
  std::vector<bool> seen(slots, false);
  for (const auto& rec : records_) {
    auto names = required_attributes(rec.kind);
    const auto& idx = kind_slots_[static_cast<std::size_t>(rec.kind)];
    for (std::size_t a = 0; a < names.size(); ++a) {
      auto slot = static_cast<std::size_t>(idx[a]);
      double v = rec.attributes.at(std::string(names[a]));
      if (!seen[slot]) {
        slot_min_[slot] = slot_max_[slot] = v;
        seen[slot] = true;
      } else {
        slot_min_[slot] = std::min(slot_min_[slot], v);
        slot_max_[slot] = std::max(slot_max_[slot], v);
      }
    }
  }
  for (const auto& rec : records_) {
    std::vector<double> vec(slots, 0.0);
    auto names = required_attributes(rec.kind);
    const auto& idx = kind_slots_[static_cast<std::size_t>(rec.kind)];
    for (std::size_t a = 0; a < names.size(); ++a) {
      auto slot = static_cast<std::size_t>(idx[a]);
      double v = rec.attributes.at(std::string(names[a]));
      double span = slot_max_[slot] - slot_min_[slot];
      // A slot with a single distinct value carries presence only.
      vec[slot] = span > 0.0 ? (v - slot_min_[slot]) / span : 1.0;
    }
    normalized_.emplace(rec.id, std::move(vec));
  }

  std::ostringstream canonical;
  save(canonical);
  hash_ = sha256(canonical.str());
}

Catalog Catalog::load(std::istream& in) {
  std::vector<ComponentRecord> records;
  CatalogDimensions dims;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::Parse, line_context(line_no) + e.what());
    }
    if (first && j.is_object() && j.contains("dimensions")) {
      const json& d = j["dimensions"];
      try {
        dims.key_classes = d.value("key_classes", 0);
        dims.value_classes = d.value("value_classes", 0);
        dims.attribute_slots = d.value("attribute_slots", 0);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, line_context(line_no) + e.what());
      }
      first = false;
      continue;
    }
    first = false;
    records.push_back(parse_record(j, line_no));
  }
  return Catalog(std::move(records), dims);
}

Catalog Catalog::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open catalog '" + path + "'");
  return load(in);
}

void Catalog::save(std::ostream& out) const {
  if (dims_ != CatalogDimensions{}) {
    json header = {{"dimensions",
                    {{"key_classes", dims_.key_classes},
                     {"value_classes", dims_.value_classes},
                     {"attribute_slots", dims_.attribute_slots}}}};
    out << header.dump() << '\n';
  }
  for (const auto& rec : records_) {
    json attrs = json::object();
    for (const auto& [name, value] : rec.attributes) attrs[name] = value;
    json j = {{"id", rec.id}, {"kind", std::string(kind_name(rec.kind))}, {"attributes", attrs}};
    out << j.dump() << '\n';
  }
}

const ComponentRecord* Catalog::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

const ComponentRecord& Catalog::at(std::string_view id) const {
  const ComponentRecord* rec = find(id);
  if (rec == nullptr) throw Error(ErrorCode::UnknownId, "unknown component id '" + std::string(id) + "'");
  return *rec;
}

std::vector<const ComponentRecord*> Catalog::of_kind(ComponentKind kind) const {
  std::vector<const ComponentRecord*> out;
  for (const auto& rec : records_) {
    if (rec.kind == kind) out.push_back(&rec);
  }
  return out;
}

std::optional<int> Catalog::value_index(std::string_view value) const {
  auto it = value_index_.find(std::string(value));
  if (it == value_index_.end()) return std::nullopt;
  return it->second;
}

std::vector<double> Catalog::attribute_vector(std::string_view id) const {
  auto it = normalized_.find(std::string(id));
  if (it == normalized_.end()) throw Error(ErrorCode::UnknownId, "unknown component id '" + std::string(id) + "'");
  return it->second;
}

std::span<const int> Catalog::attribute_slots_of(ComponentKind kind) const {
  return kind_slots_[static_cast<std::size_t>(kind)];
}

std::string hash_hex(const ContentHash& hash) { return to_hex(hash); }

}  // namespace uav
