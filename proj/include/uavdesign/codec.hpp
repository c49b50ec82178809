#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "uavdesign/catalog.hpp"
#include "uavdesign/design.hpp"

namespace uav {

inline constexpr std::size_t kMaxSequenceLength = 256;

// One singleton key-value pair of the flattened design.
struct Token {
  ParamKey key;
  ParamValue value;

  bool operator==(const Token&) const = default;
};

using TokenSequence = std::vector<Token>;

// Preorder flattening: node_type, leading params, children, then any trailing
// root parameter (batteryType). Symmetric subtrees are emitted once.
TokenSequence flatten(const DesignNode& tree);

// Grammar-directed inverse of flatten. Error positions are 1-based.
DesignNode parse(const TokenSequence& seq, const Catalog& catalog);

// Serialization: one JSON array of singleton objects per design line.
nlohmann::json to_json(const TokenSequence& seq);
TokenSequence sequence_from_json(const nlohmann::json& j);
std::string to_json_line(const TokenSequence& seq);
// Python-literal rendering: [{'node_type': 'ConnectedHub4_Sym'}, ...]
std::string to_literal(const TokenSequence& seq);

// Per-key z-score statistics for numeric tokens. Defaults to the identity map.
class FloatNormalizer {
 public:
  struct Stat {
    double mean = 0.0;
    double stddev = 1.0;
    bool operator==(const Stat&) const = default;
  };

  static FloatNormalizer fit(const std::vector<TokenSequence>& sequences);

  double normalize(ParamKey key, double x) const;
  double denormalize(ParamKey key, double z) const;

  const Stat& stat(ParamKey key) const { return stats_[static_cast<std::size_t>(key)]; }
  void set_stat(ParamKey key, Stat s);

  bool operator==(const FloatNormalizer&) const = default;

 private:
  std::array<Stat, kParamKeyCount> stats_{};
};

// Segment layout of a raw token vector: [key one-hot | value one-hot | attributes | float].
struct EmbeddingLayout {
  int key_classes = 0;
  int value_classes = 0;
  int attribute_slots = 0;

  static EmbeddingLayout of(const Catalog& catalog);

  int key_offset() const { return 0; }
  int value_offset() const { return key_classes; }
  int attribute_offset() const { return key_classes + value_classes; }
  int float_offset() const { return key_classes + value_classes + attribute_slots; }
  int width() const { return key_classes + value_classes + attribute_slots + 1; }
};

using RawTokenVector = Eigen::VectorXd;

struct EmbeddedSequence {
  Eigen::MatrixXd rows;     // pad_to x width, row-per-token
  std::vector<bool> mask;   // true on real tokens

  int length() const;       // number of real tokens
  int last_real() const;    // index of the last real token, -1 when none
};

RawTokenVector embed_token(const Token& token, const Catalog& catalog, const FloatNormalizer& normalizer = {});
EmbeddedSequence embed_sequence(const TokenSequence& seq, const Catalog& catalog, std::size_t pad_to,
                                const FloatNormalizer& normalizer = {});

}  // namespace uav
