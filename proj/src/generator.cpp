#include "uavdesign/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "uavdesign/codec.hpp"
#include "uavdesign/error.hpp"
#include "uavdesign/parallel.hpp"
#include "uavdesign/rng.hpp"

namespace uav {

namespace {

using json = nlohmann::json;

constexpr int kMaxAttempts = 8;

struct ComponentPools {
  std::array<std::vector<const ComponentRecord*>, 4> by_kind;

  explicit ComponentPools(const Catalog& catalog) {
    for (int k = 0; k < 4; ++k) {
      by_kind[static_cast<std::size_t>(k)] = catalog.of_kind(static_cast<ComponentKind>(k));
      if (by_kind[static_cast<std::size_t>(k)].empty()) {
        throw Error(ErrorCode::Config,
                    "catalog has no " + std::string(kind_name(static_cast<ComponentKind>(k))) + " records to sample");
      }
    }
  }

  const std::string& pick(ComponentKind kind, Rng& rng) const {
    const auto& pool = by_kind[static_cast<std::size_t>(kind)];
    return pool[rng.below(pool.size())]->id;
  }
};

// Stored at single precision, like the reference design's parameters.
double draw(Rng& rng, const Range& r) {
  return static_cast<double>(static_cast<float>(rng.uniform(r.first, r.second)));
}

class Sampler {
 public:
  Sampler(const GeneratorConfig& config, const ComponentPools& pools, Rng& rng)
      : cfg_(config), pools_(pools), rng_(rng) {}

  DesignNode design() {
    int wings = static_cast<int>(rng_.categorical(cfg_.wing_count_weights));
    int arity = draw_arity();
    DesignNode root;
    if (wings == 0 && rng_.bernoulli(cfg_.symmetry_prob)) {
      root.kind = NodeKind::hub(arity, true);
      root.children.push_back(propulsion(1));
    } else {
      root.kind = NodeKind::hub(arity, false);
      std::vector<bool> is_wing(static_cast<std::size_t>(arity), false);
      int to_place = std::min(wings, arity);
      // Random subset of connection slots carries the wings.
      std::vector<int> slots(static_cast<std::size_t>(arity));
      for (int i = 0; i < arity; ++i) slots[static_cast<std::size_t>(i)] = i;
      for (int i = 0; i < to_place; ++i) {
        auto j = static_cast<std::size_t>(i) + rng_.below(static_cast<std::uint64_t>(arity - i));
        std::swap(slots[static_cast<std::size_t>(i)], slots[j]);
        is_wing[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])] = true;
      }
      for (int i = 0; i < arity; ++i) {
        root.children.push_back(is_wing[static_cast<std::size_t>(i)] ? wing() : propulsion(1));
      }
    }
    root.params.push_back({ParamKey::BatteryType, pools_.pick(ComponentKind::Battery, rng_)});
    return root;
  }

  DesignNode arm() {
    DesignNode n{NodeKind::prop_arm(), {}, {}};
    n.params.reserve(9);
    n.params.push_back({ParamKey::ArmLength, draw(rng_, cfg_.armLength_range_mm)});
    n.params.push_back({ParamKey::MotorType, pools_.pick(ComponentKind::Motor, rng_)});
    n.params.push_back({ParamKey::PropType, pools_.pick(ComponentKind::Propeller, rng_)});
    n.params.push_back({ParamKey::EscType, pools_.pick(ComponentKind::Esc, rng_)});
    n.params.push_back({ParamKey::Offset, draw(rng_, cfg_.offset_range_mm)});
    n.params.push_back({ParamKey::Offset, draw(rng_, cfg_.offset_range_mm)});
    n.params.push_back({ParamKey::Angle, draw(rng_, cfg_.angle_range_deg)});
    n.params.push_back({ParamKey::X1Offset, draw(rng_, cfg_.offset_range_mm)});
    n.params.push_back({ParamKey::Z1Offset, draw(rng_, cfg_.offset_range_mm)});
    return n;
  }

 private:
  int draw_arity() { return kMinHubArity + static_cast<int>(rng_.categorical(cfg_.arity_weights)); }

  DesignNode propulsion(int depth) {
    if (depth < cfg_.max_depth && rng_.bernoulli(cfg_.nested_hub_prob)) {
      int arity = draw_arity();
      bool sym = rng_.bernoulli(cfg_.symmetry_prob);
      DesignNode hub{NodeKind::hub(arity, sym), {}, {}};
      int count = sym ? 1 : arity;
      for (int i = 0; i < count; ++i) hub.children.push_back(propulsion(depth + 1));
      return hub;
    }
    return arm();
  }

  DesignNode wing() {
    DesignNode n{NodeKind::wing(), {}, {}};
    n.params.push_back({ParamKey::SpanMm, draw(rng_, cfg_.wing_span_range_mm)});
    n.params.push_back({ParamKey::ChordMm, draw(rng_, cfg_.wing_chord_range_mm)});
    n.params.push_back({ParamKey::AngleDeg, draw(rng_, cfg_.angle_range_deg)});
    n.params.push_back({ParamKey::Offset, draw(rng_, cfg_.offset_range_mm)});
    return n;
  }

  const GeneratorConfig& cfg_;
  const ComponentPools& pools_;
  Rng& rng_;
};

// Replaces nested hubs under the root with single arms; a root of at most 13
// leaves always fits the sequence budget.
void truncate_structure(DesignNode& root, Sampler& sampler) {
  for (DesignNode& child : root.children) {
    if (child.kind.type == NodeType::Hub) child = sampler.arm();
  }
}

DesignNode sample_with(const GeneratorConfig& config, std::uint64_t index, const ComponentPools& pools) {
  Rng rng(config.seed, index);
  Sampler sampler(config, pools, rng);
  DesignNode tree;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    tree = sampler.design();
    if (sequence_length(tree) <= kMaxSequenceLength) return tree;
  }
  truncate_structure(tree, sampler);
  return tree;
}

void check_range(const Range& r, const char* name) {
  if (!std::isfinite(r.first) || !std::isfinite(r.second) || !(r.first < r.second)) {
    throw Error(ErrorCode::Config, std::string(name) + " must satisfy min < max");
  }
}

template <std::size_t N>
void check_weights(const std::array<double, N>& w, const char* name) {
  double total = 0.0;
  for (double x : w) {
    if (!std::isfinite(x) || x < 0.0) throw Error(ErrorCode::Config, std::string(name) + " entries must be >= 0");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::Config, std::string(name) + " must sum to 1 (got " + std::to_string(total) + ")");
  }
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::Config, std::string(name) + " must lie in [0, 1]");
}

json range_json(const Range& r) { return json::array({r.first, r.second}); }

Range range_from(const json& j, const char* name) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw Error(ErrorCode::Config, std::string(name) + " must be a [min, max] pair");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

template <std::size_t N>
std::array<double, N> weights_from(const json& j, const char* name) {
  if (!j.is_array() || j.size() != N) {
    throw Error(ErrorCode::Config, std::string(name) + " must list " + std::to_string(N) + " weights");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::Config, std::string(name) + " entries must be numbers");
    out[i] = j[i].get<double>();
  }
  return out;
}

}  // namespace

void GeneratorConfig::validate() const {
  check_weights(arity_weights, "arity_weights");
  check_weights(wing_count_weights, "wing_count_weights");
  check_probability(symmetry_prob, "symmetry_prob");
  check_probability(nested_hub_prob, "nested_hub_prob");
  if (max_depth < 1) throw Error(ErrorCode::Config, "max_depth must be >= 1");
  check_range(armLength_range_mm, "armLength_range_mm");
  check_range(offset_range_mm, "offset_range_mm");
  check_range(angle_range_deg, "angle_range_deg");
  check_range(wing_span_range_mm, "wing_span_range_mm");
  check_range(wing_chord_range_mm, "wing_chord_range_mm");
  if (armLength_range_mm.first <= 0.0 || wing_span_range_mm.first <= 0.0 || wing_chord_range_mm.first <= 0.0) {
    throw Error(ErrorCode::Config, "length ranges must be strictly positive");
  }
}

json GeneratorConfig::to_json() const {
  return json{
      {"seed", seed},
      {"arity_weights", arity_weights},
      {"symmetry_prob", symmetry_prob},
      {"wing_count_weights", wing_count_weights},
      {"max_depth", max_depth},
      {"armLength_range_mm", range_json(armLength_range_mm)},
      {"offset_range_mm", range_json(offset_range_mm)},
      {"angle_range_deg", range_json(angle_range_deg)},
      {"nested_hub_prob", nested_hub_prob},
      {"wing_span_range_mm", range_json(wing_span_range_mm)},
      {"wing_chord_range_mm", range_json(wing_chord_range_mm)},
  };
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Config, "generator config must be a JSON object");
  GeneratorConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      if (!value.is_number_integer()) throw Error(ErrorCode::Config, "seed must be an integer");
      c.seed = value.get<std::uint64_t>();
    } else if (key == "arity_weights") {
      c.arity_weights = weights_from<12>(value, "arity_weights");
    } else if (key == "symmetry_prob") {
      if (!value.is_number()) throw Error(ErrorCode::Config, "symmetry_prob must be a number");
      c.symmetry_prob = value.get<double>();
    } else if (key == "wing_count_weights") {
      c.wing_count_weights = weights_from<5>(value, "wing_count_weights");
    } else if (key == "max_depth") {
      if (!value.is_number_integer()) throw Error(ErrorCode::Config, "max_depth must be an integer");
      c.max_depth = value.get<int>();
    } else if (key == "armLength_range_mm") {
      c.armLength_range_mm = range_from(value, "armLength_range_mm");
    } else if (key == "offset_range_mm") {
      c.offset_range_mm = range_from(value, "offset_range_mm");
    } else if (key == "angle_range_deg") {
      c.angle_range_deg = range_from(value, "angle_range_deg");
    } else if (key == "nested_hub_prob") {
      if (!value.is_number()) throw Error(ErrorCode::Config, "nested_hub_prob must be a number");
      c.nested_hub_prob = value.get<double>();
    } else if (key == "wing_span_range_mm") {
      c.wing_span_range_mm = range_from(value, "wing_span_range_mm");
    } else if (key == "wing_chord_range_mm") {
      c.wing_chord_range_mm = range_from(value, "wing_chord_range_mm");
    } else {
      throw Error(ErrorCode::Config, "unknown generator config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

GeneratorConfig GeneratorConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open generator config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, "generator config '" + path + "': " + e.what());
  }
  return from_json(j);
}

DesignNode sample_design(const GeneratorConfig& config, std::uint64_t index, const Catalog& catalog) {
  ComponentPools pools(catalog);
  return sample_with(config, index, pools);
}

std::vector<DesignNode> sample_batch(const GeneratorConfig& config, std::uint64_t start_index, std::size_t n,
                                     const Catalog& catalog, int threads) {
  std::vector<DesignNode> out(n);
  if (n == 0) return out;
  ComponentPools pools(catalog);
  parallel_for(
      n, [&](std::size_t i) { out[i] = sample_with(config, start_index + i, pools); }, threads);
  return out;
}

}  // namespace uav
