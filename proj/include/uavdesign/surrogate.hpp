#pragma once
/*
  Transformer-encoder hover classifier with a hand-written backward pass.

  Per sequence: sparse input projection, sinusoidal positions, n_layers encoder
  blocks (masked multi-head self-attention and a ReLU feed-forward block, each
  with a residual connection and layer norm), then a linear readout of the
  hidden state at the last real token.

  Parameters live in one flat float64 vector so that SGD, checkpoints and
  finite-difference checks can treat them uniformly. Padded positions never
  enter the computation: they are masked out as attention keys (weight exactly
  zero) and nothing downstream reads their hidden states.
*/

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "uavdesign/catalog.hpp"
#include "uavdesign/codec.hpp"

namespace uav {

enum class NormPlacement { Post, Pre };

struct ModelConfig {
  int input_dim = 741;
  int d_model = 200;
  int n_layers = 8;
  int n_heads = 2;
  int d_ff = 800;
  int max_seq_len = static_cast<int>(kMaxSequenceLength);
  double dropout = 0.0;  // only 0 is supported
  NormPlacement norm = NormPlacement::Post;

  void validate() const;  // throws Config
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 2500;
  int batch_size = 128;
  std::uint64_t shuffle_seed = 1;
  std::uint64_t init_seed = 0;

  void validate() const;  // throws Config
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Nonzero entries of each real token row plus its absolute position.
struct SparseSequence {
  std::vector<int> positions;
  std::vector<std::vector<std::pair<int, double>>> entries;

  std::size_t length() const { return positions.size(); }
  bool operator==(const SparseSequence&) const = default;
};

SparseSequence sparsify(const EmbeddedSequence& seq);
// Same result as sparsify(embed_sequence(seq, ...)) without the dense matrix.
SparseSequence encode_sparse(const TokenSequence& seq, const Catalog& catalog, const FloatNormalizer& normalizer);

// Offsets of every tensor inside the flat parameter vector. Matrices are stored
// column-major with the shapes noted; the input projection is kept as
// d_model x input_dim so each input feature's weights are contiguous.
struct ParameterLayout {
  struct Block {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;  // d x d weights, d biases
    std::size_t ln1_g, ln1_b;
    std::size_t w1, c1;                          // d x d_ff, d_ff
    std::size_t w2, c2;                          // d_ff x d, d
    std::size_t ln2_g, ln2_b;
    bool operator==(const Block&) const = default;
  };
  std::size_t w_in = 0, b_in = 0;  // d x input_dim, d
  std::vector<Block> blocks;
  std::size_t w_out = 0, b_out = 0;  // d, 1
  std::size_t size = 0;

  static ParameterLayout of(const ModelConfig& config);
  bool operator==(const ParameterLayout&) const = default;
};

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

class SurrogateModel {
 public:
  SurrogateModel() = default;
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; zero biases, unit
  // layer-norm scales.
  SurrogateModel(const ModelConfig& config, const ContentHash& catalog_hash, std::uint64_t init_seed);
  // Adopts existing parameters; their count must match the config's layout.
  SurrogateModel(const ModelConfig& config, const ContentHash& catalog_hash, std::vector<double> params);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  const ContentHash& catalog_hash() const { return catalog_hash_; }
  const FloatNormalizer& normalizer() const { return normalizer_; }
  void set_normalizer(const FloatNormalizer& n) { normalizer_ = n; }

  double logit(const SparseSequence& seq) const;
  // Adds weight * d(loss)/d(params) for this example to grad and returns the
  // unweighted example loss.
  double accumulate_gradient(const SparseSequence& seq, int label, double weight, std::vector<double>& grad,
                             double* logit_out = nullptr) const;

  // Attention weights of one head: rows are real query tokens, columns are all
  // padded key positions (zero where masked).
  Eigen::MatrixXd attention_weights(const EmbeddedSequence& seq, int layer, int head) const;

 private:
  struct Cache;
  double run(const SparseSequence& seq, Cache* cache) const;

  ModelConfig config_;
  ParameterLayout layout_;
  std::vector<double> params_;
  ContentHash catalog_hash_{};
  FloatNormalizer normalizer_;
  Eigen::MatrixXd pe_;  // max_seq_len x d_model, derived from config
};

// Row-wise (x - mean) / sqrt(var + eps), the scale-free part of layer norm.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& x, double eps = 1e-9);

Eigen::MatrixXd sinusoidal_encoding(int length, int d_model);

double bce_with_logits(double logit, int label);
double sigmoid(double logit);

Eigen::VectorXd forward(const SurrogateModel& model, const std::vector<EmbeddedSequence>& batch);
Eigen::VectorXd predict_proba(const SurrogateModel& model, const std::vector<EmbeddedSequence>& batch);
Eigen::VectorXd forward_sparse(const SurrogateModel& model, const std::vector<SparseSequence>& batch,
                               int threads = 1);

struct LossAndGradients {
  double loss = 0.0;
  std::vector<double> gradients;
};

// Mean BCE over the batch. Examples are reduced in fixed chunks of 16 so the
// result does not depend on the thread count.
LossAndGradients loss_and_gradients(const SurrogateModel& model, const std::vector<SparseSequence>& batch,
                                    const std::vector<int>& labels, int threads = 1);
LossAndGradients loss_and_gradients(const SurrogateModel& model, const std::vector<EmbeddedSequence>& batch,
                                    const std::vector<int>& labels);

struct TrainResult {
  SurrogateModel model;
  std::vector<EpochStats> history;
};

// Epoch loss and accuracy are accumulated over the epoch's minibatches before
// each update. on_epoch (optional) sees the 1-based epoch and its stats.
TrainResult train(SurrogateModel model, const std::vector<SparseSequence>& inputs, const std::vector<int>& labels,
                  const TrainConfig& config, int threads = 1,
                  const std::function<void(int, const EpochStats&)>& on_epoch = {});

inline constexpr char kCheckpointMagic[9] = "UAVSURR1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_bytes(const SurrogateModel& model);
void save_checkpoint(const SurrogateModel& model, std::ostream& out);
// expected_hash == nullptr skips the catalog check; allow_hash_mismatch turns
// the check off explicitly.
SurrogateModel load_checkpoint(const std::string& bytes, const ContentHash* expected_hash,
                               bool allow_hash_mismatch = false);
SurrogateModel load_checkpoint(std::istream& in, const ContentHash* expected_hash, bool allow_hash_mismatch = false);

}  // namespace uav
