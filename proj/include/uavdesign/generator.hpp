#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "uavdesign/catalog.hpp"
#include "uavdesign/design.hpp"

namespace uav {

using Range = std::pair<double, double>;

struct GeneratorConfig {
  std::uint64_t seed = 42;
  // Weights over hub arities 2..13.
  std::array<double, 12> arity_weights = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  double symmetry_prob = 0.7;
  // Weights over 0..4 wings.
  std::array<double, 5> wing_count_weights = {0.6, 0.05, 0.15, 0.05, 0.15};
  int max_depth = 2;
  Range armLength_range_mm = {80.0, 400.0};
  Range offset_range_mm = {-10.0, 10.0};
  Range angle_range_deg = {0.0, 90.0};
  // Chance that a propulsion slot above max_depth becomes a nested hub.
  double nested_hub_prob = 0.2;
  Range wing_span_range_mm = {300.0, 1500.0};
  Range wing_chord_range_mm = {80.0, 300.0};

  GeneratorConfig() {
    for (double& w : arity_weights) w = 1.0 / 12.0;
  }

  void validate() const;  // throws Config

  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static GeneratorConfig from_json(const nlohmann::json& j);
  static GeneratorConfig load_file(const std::string& path);
};

// Deterministic function of (config, index, catalog). The result always passes
// validate_design and flattens to at most kMaxSequenceLength tokens.
DesignNode sample_design(const GeneratorConfig& config, std::uint64_t index, const Catalog& catalog);

std::vector<DesignNode> sample_batch(const GeneratorConfig& config, std::uint64_t start_index, std::size_t n,
                                     const Catalog& catalog, int threads = 1);

}  // namespace uav
