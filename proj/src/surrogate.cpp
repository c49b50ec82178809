#include "uavdesign/surrogate.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <iterator>
#include <limits>
#include <numeric>
#include <ostream>

#include "uavdesign/error.hpp"
#include "uavdesign/io.hpp"
#include "uavdesign/parallel.hpp"
#include "uavdesign/rng.hpp"

namespace uav {

static_assert(std::endian::native == std::endian::little, "checkpoint code assumes a little-endian host");

namespace {

using json = nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using CMap = Eigen::Map<const MatrixXd>;
using CVec = Eigen::Map<const VectorXd>;
using GMap = Eigen::Map<MatrixXd>;
using GVec = Eigen::Map<VectorXd>;

constexpr double kLayerNormEps = 1e-9;
constexpr std::size_t kGradientChunk = 16;

int int_field(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw Error(ErrorCode::Config, "'" + key + "' must be an integer");
  return v.get<int>();
}

double number_field(const json& v, const std::string& key) {
  if (!v.is_number()) throw Error(ErrorCode::Config, "'" + key + "' must be a number");
  return v.get<double>();
}

struct LayerNormCache {
  MatrixXd xhat;
  VectorXd inv_std;
};

MatrixXd layer_norm(const MatrixXd& x, const CVec& g, const CVec& b, LayerNormCache* cache) {
  MatrixXd xhat(x.rows(), x.cols());
  VectorXd inv_std(x.rows());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = x.row(r).sum() / n;
    double var = (x.row(r).array() - mean).square().sum() / n;
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  MatrixXd y = (xhat.array().rowwise() * g.transpose().array()).matrix();
  y.rowwise() += b.transpose();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

MatrixXd layer_norm_backward(const MatrixXd& dy, const CVec& g, const LayerNormCache& cache, GVec dg, GVec db) {
  dg += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
  db += dy.colwise().sum().transpose();
  MatrixXd dxhat = (dy.array().rowwise() * g.transpose().array()).matrix();
  const double n = static_cast<double>(dy.cols());
  MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    double m1 = dxhat.row(r).sum() / n;
    double m2 = dxhat.row(r).dot(cache.xhat.row(r)) / n;
    dx.row(r) = ((dxhat.row(r).array() - m1) - cache.xhat.row(r).array() * m2) * cache.inv_std(r);
  }
  return dx;
}

void softmax_rows(MatrixXd& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::string& out, double v) { out.append(reinterpret_cast<const char*>(&v), 8); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::Truncation, std::string("checkpoint truncated while reading ") + what);
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Configs

void ModelConfig::validate() const {
  if (input_dim < 1 || d_model < 1 || n_layers < 0 || n_heads < 1 || d_ff < 1 || max_seq_len < 1) {
    throw Error(ErrorCode::Config, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw Error(ErrorCode::Config, "d_model must be divisible by n_heads");
  if (dropout != 0.0) throw Error(ErrorCode::Config, "dropout is not supported; set it to 0");
}

json ModelConfig::to_json() const {
  return json{{"input_dim", input_dim}, {"d_model", d_model},         {"n_layers", n_layers},
              {"n_heads", n_heads},     {"d_ff", d_ff},               {"max_seq_len", max_seq_len},
              {"dropout", dropout},     {"norm", norm == NormPlacement::Post ? "post" : "pre"}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Config, "model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "input_dim") c.input_dim = int_field(value, key);
    else if (key == "d_model") c.d_model = int_field(value, key);
    else if (key == "n_layers") c.n_layers = int_field(value, key);
    else if (key == "n_heads") c.n_heads = int_field(value, key);
    else if (key == "d_ff") c.d_ff = int_field(value, key);
    else if (key == "max_seq_len") c.max_seq_len = int_field(value, key);
    else if (key == "dropout") c.dropout = number_field(value, key);
    else if (key == "norm") {
      if (value == "post") c.norm = NormPlacement::Post;
      else if (value == "pre") c.norm = NormPlacement::Pre;
      else throw Error(ErrorCode::Config, "'norm' must be \"post\" or \"pre\"");
    } else {
      throw Error(ErrorCode::Config, "unknown model config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::Config, "learning_rate must be finite and > 0");
  }
  if (epochs < 1) throw Error(ErrorCode::Config, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::Config, "batch_size must be >= 1");
}

json TrainConfig::to_json() const {
  return json{{"learning_rate", learning_rate},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"shuffle_seed", shuffle_seed},
              {"init_seed", init_seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Config, "train config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") c.learning_rate = number_field(value, key);
    else if (key == "epochs") c.epochs = int_field(value, key);
    else if (key == "batch_size") c.batch_size = int_field(value, key);
    else if (key == "shuffle_seed" || key == "init_seed") {
      if (!value.is_number_unsigned()) throw Error(ErrorCode::Config, "'" + key + "' must be a non-negative integer");
      (key == "shuffle_seed" ? c.shuffle_seed : c.init_seed) = value.get<std::uint64_t>();
    } else {
      throw Error(ErrorCode::Config, "unknown train config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Inputs

SparseSequence sparsify(const EmbeddedSequence& seq) {
  if (seq.mask.size() != static_cast<std::size_t>(seq.rows.rows())) {
    throw Error(ErrorCode::DimensionMismatch, "mask length does not match the number of rows");
  }
  SparseSequence out;
  for (Eigen::Index r = 0; r < seq.rows.rows(); ++r) {
    if (!seq.mask[static_cast<std::size_t>(r)]) continue;
    std::vector<std::pair<int, double>> row;
    for (Eigen::Index c = 0; c < seq.rows.cols(); ++c) {
      double v = seq.rows(r, c);
      if (v != 0.0) row.emplace_back(static_cast<int>(c), v);
    }
    out.positions.push_back(static_cast<int>(r));
    out.entries.push_back(std::move(row));
  }
  return out;
}

SparseSequence encode_sparse(const TokenSequence& seq, const Catalog& catalog, const FloatNormalizer& normalizer) {
  SparseSequence out;
  out.positions.reserve(seq.size());
  out.entries.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    RawTokenVector v = embed_token(seq[i], catalog, normalizer);
    std::vector<std::pair<int, double>> row;
    for (Eigen::Index c = 0; c < v.size(); ++c) {
      if (v(c) != 0.0) row.emplace_back(static_cast<int>(c), v(c));
    }
    out.positions.push_back(static_cast<int>(i));
    out.entries.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

ParameterLayout ParameterLayout::of(const ModelConfig& c) {
  ParameterLayout l;
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t ff = static_cast<std::size_t>(c.d_ff);
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    std::size_t off = at;
    at += n;
    return off;
  };
  l.w_in = take(d * static_cast<std::size_t>(c.input_dim));
  l.b_in = take(d);
  for (int i = 0; i < c.n_layers; ++i) {
    Block b{};
    b.wq = take(d * d);
    b.bq = take(d);
    b.wk = take(d * d);
    b.bk = take(d);
    b.wv = take(d * d);
    b.bv = take(d);
    b.wo = take(d * d);
    b.bo = take(d);
    b.ln1_g = take(d);
    b.ln1_b = take(d);
    b.w1 = take(d * ff);
    b.c1 = take(ff);
    b.w2 = take(ff * d);
    b.c2 = take(d);
    b.ln2_g = take(d);
    b.ln2_b = take(d);
    l.blocks.push_back(b);
  }
  l.w_out = take(d);
  l.b_out = take(1);
  l.size = at;
  return l;
}

MatrixXd sinusoidal_encoding(int length, int d_model) {
  MatrixXd pe(length, d_model);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d_model; i += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
      pe(pos, i) = std::sin(pos * freq);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

MatrixXd normalize_rows(const MatrixXd& x, double eps) {
  MatrixXd out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = x.row(r).sum() / n;
    double var = (x.row(r).array() - mean).square().sum() / n;
    out.row(r) = (x.row(r).array() - mean) / std::sqrt(var + eps);
  }
  return out;
}

SurrogateModel::SurrogateModel(const ModelConfig& config, const ContentHash& catalog_hash, std::uint64_t init_seed)
    : config_(config), layout_(ParameterLayout::of(config)), catalog_hash_(catalog_hash) {
  config_.validate();
  params_.assign(layout_.size, 0.0);
  pe_ = sinusoidal_encoding(config_.max_seq_len, config_.d_model);
  Rng rng(init_seed);
  auto fill = [&](std::size_t off, std::size_t n, int fan_in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = rng.uniform(-bound, bound);
  };
  auto ones = [&](std::size_t off, int n) { std::fill_n(params_.begin() + static_cast<long>(off), n, 1.0); };
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t ff = static_cast<std::size_t>(config_.d_ff);
  fill(layout_.w_in, d * static_cast<std::size_t>(config_.input_dim), config_.input_dim);
  for (const auto& b : layout_.blocks) {
    fill(b.wq, d * d, config_.d_model);
    fill(b.wk, d * d, config_.d_model);
    fill(b.wv, d * d, config_.d_model);
    fill(b.wo, d * d, config_.d_model);
    ones(b.ln1_g, config_.d_model);
    fill(b.w1, d * ff, config_.d_model);
    fill(b.w2, ff * d, config_.d_ff);
    ones(b.ln2_g, config_.d_model);
  }
  fill(layout_.w_out, d, config_.d_model);
}

SurrogateModel::SurrogateModel(const ModelConfig& config, const ContentHash& catalog_hash, std::vector<double> params)
    : config_(config), layout_(ParameterLayout::of(config)), params_(std::move(params)), catalog_hash_(catalog_hash) {
  config_.validate();
  if (params_.size() != layout_.size) {
    throw Error(ErrorCode::DimensionMismatch, "parameter count " + std::to_string(params_.size()) +
                                                  " does not match the model config (" +
                                                  std::to_string(layout_.size) + ")");
  }
  pe_ = sinusoidal_encoding(config_.max_seq_len, config_.d_model);
}

// ---------------------------------------------------------------------------
// Forward / backward

struct SurrogateModel::Cache {
  struct Layer {
    MatrixXd x;                  // block input
    LayerNormCache ln1, ln2;
    MatrixXd attn_in;            // x (post-norm) or LN1(x) (pre-norm)
    MatrixXd q, k, v;
    std::vector<MatrixXd> probs;  // per head, L x L
    MatrixXd ctx;
    MatrixXd ffn_in;             // LN1 output (post) or LN2(r1) (pre)
    MatrixXd hidden_pre;         // L x d_ff
  };
  std::vector<Layer> layers;
  MatrixXd final_out;
};

double SurrogateModel::run(const SparseSequence& seq, Cache* cache) const {
  const int L = static_cast<int>(seq.length());
  const int d = config_.d_model;
  const int heads = config_.n_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* p = params_.data();
  if (L == 0) throw Error(ErrorCode::EmptyMask, "sequence has no real tokens");
  if (seq.entries.size() != seq.positions.size()) {
    throw Error(ErrorCode::DimensionMismatch, "sparse sequence positions and entries disagree");
  }

  CMap w_in(p + layout_.w_in, d, config_.input_dim);
  MatrixXd x(L, d);
  for (int t = 0; t < L; ++t) {
    int pos = seq.positions[static_cast<std::size_t>(t)];
    if (pos < 0 || pos >= config_.max_seq_len) {
      throw Error(ErrorCode::DimensionMismatch, "token position " + std::to_string(pos) + " exceeds max_seq_len " +
                                                    std::to_string(config_.max_seq_len));
    }
    VectorXd row = CVec(p + layout_.b_in, d) + pe_.row(pos).transpose();
    for (const auto& [idx, val] : seq.entries[static_cast<std::size_t>(t)]) {
      if (idx < 0 || idx >= config_.input_dim) {
        throw Error(ErrorCode::DimensionMismatch, "input feature " + std::to_string(idx) +
                                                      " outside input_dim " + std::to_string(config_.input_dim));
      }
      row.noalias() += val * w_in.col(idx);
    }
    x.row(t) = row.transpose();
  }

  if (cache) cache->layers.resize(layout_.blocks.size());
  for (std::size_t li = 0; li < layout_.blocks.size(); ++li) {
    const auto& b = layout_.blocks[li];
    Cache::Layer scratch;
    Cache::Layer& c = cache ? cache->layers[li] : scratch;
    const bool post = config_.norm == NormPlacement::Post;
    CVec ln1_g(p + b.ln1_g, d), ln1_b(p + b.ln1_b, d), ln2_g(p + b.ln2_g, d), ln2_b(p + b.ln2_b, d);

    c.x = x;
    c.attn_in = post ? x : layer_norm(x, ln1_g, ln1_b, &c.ln1);
    c.q = c.attn_in * CMap(p + b.wq, d, d);
    c.q.rowwise() += CVec(p + b.bq, d).transpose();
    c.k = c.attn_in * CMap(p + b.wk, d, d);
    c.k.rowwise() += CVec(p + b.bk, d).transpose();
    c.v = c.attn_in * CMap(p + b.wv, d, d);
    c.v.rowwise() += CVec(p + b.bv, d).transpose();
    c.ctx.resize(L, d);
    c.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      MatrixXd s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
      softmax_rows(s);
      c.ctx.middleCols(h * dh, dh).noalias() = s * c.v.middleCols(h * dh, dh);
      c.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    MatrixXd r1 = x + c.ctx * CMap(p + b.wo, d, d);
    r1.rowwise() += CVec(p + b.bo, d).transpose();

    c.ffn_in = post ? layer_norm(r1, ln1_g, ln1_b, &c.ln1) : layer_norm(r1, ln2_g, ln2_b, &c.ln2);
    c.hidden_pre = c.ffn_in * CMap(p + b.w1, d, config_.d_ff);
    c.hidden_pre.rowwise() += CVec(p + b.c1, config_.d_ff).transpose();
    MatrixXd f = c.hidden_pre.cwiseMax(0.0) * CMap(p + b.w2, config_.d_ff, d);
    f.rowwise() += CVec(p + b.c2, d).transpose();

    if (post) {
      x = layer_norm(c.ffn_in + f, ln2_g, ln2_b, &c.ln2);
    } else {
      x = r1 + f;
    }
  }

  double z = CVec(p + layout_.w_out, d).dot(x.row(L - 1).transpose()) + p[layout_.b_out];
  if (cache) cache->final_out = std::move(x);
  return z;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double SurrogateModel::logit(const SparseSequence& seq) const { return run(seq, nullptr); }

double bce_with_logits(double z, int label) {
  // max(z, 0) - z*y + log(1 + exp(-|z|))
  return std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
}

double SurrogateModel::accumulate_gradient(const SparseSequence& seq, int label, double weight,
                                           std::vector<double>& grad, double* logit_out) const {
  if (label != 0 && label != 1) throw Error(ErrorCode::Config, "labels must be 0 or 1");
  if (grad.size() != params_.size()) throw Error(ErrorCode::DimensionMismatch, "gradient buffer has the wrong size");
  Cache cache;
  const double z = run(seq, &cache);
  if (logit_out) *logit_out = z;
  const double loss = bce_with_logits(z, label);

  const int L = static_cast<int>(seq.length());
  const int d = config_.d_model;
  const int ff = config_.d_ff;
  const int heads = config_.n_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* p = params_.data();
  double* g = grad.data();
  const bool post = config_.norm == NormPlacement::Post;

  const double dz = weight * (sigmoid(z) - label);
  GVec(g + layout_.w_out, d) += dz * cache.final_out.row(L - 1).transpose();
  g[layout_.b_out] += dz;
  MatrixXd dx = MatrixXd::Zero(L, d);
  dx.row(L - 1) = dz * CVec(p + layout_.w_out, d).transpose();

  for (std::size_t li = layout_.blocks.size(); li-- > 0;) {
    const auto& b = layout_.blocks[li];
    const Cache::Layer& c = cache.layers[li];
    CVec ln1_g(p + b.ln1_g, d), ln2_g(p + b.ln2_g, d);

    // Feed-forward half.
    MatrixXd df;   // gradient at the FFN output
    MatrixXd dr1;  // gradient at the attention residual sum
    if (post) {
      df = layer_norm_backward(dx, ln2_g, c.ln2, GVec(g + b.ln2_g, d), GVec(g + b.ln2_b, d));
    } else {
      df = dx;
    }
    MatrixXd hidden = c.hidden_pre.cwiseMax(0.0);
    GMap(g + b.w2, ff, d).noalias() += hidden.transpose() * df;
    GVec(g + b.c2, d) += df.colwise().sum().transpose();
    MatrixXd dhidden = df * CMap(p + b.w2, ff, d).transpose();
    dhidden = (c.hidden_pre.array() > 0.0).select(dhidden, 0.0);
    GMap(g + b.w1, d, ff).noalias() += c.ffn_in.transpose() * dhidden;
    GVec(g + b.c1, ff) += dhidden.colwise().sum().transpose();
    MatrixXd dffn_in = dhidden * CMap(p + b.w1, d, ff).transpose();
    if (post) {
      // ffn_in = LN1(r1) also feeds the second residual directly.
      dr1 = layer_norm_backward(dffn_in + df, ln1_g, c.ln1, GVec(g + b.ln1_g, d), GVec(g + b.ln1_b, d));
    } else {
      dr1 = dx + layer_norm_backward(dffn_in, ln2_g, c.ln2, GVec(g + b.ln2_g, d), GVec(g + b.ln2_b, d));
    }

    // Attention half: r1 = x + ctx*Wo + bo.
    GMap(g + b.wo, d, d).noalias() += c.ctx.transpose() * dr1;
    GVec(g + b.bo, d) += dr1.colwise().sum().transpose();
    MatrixXd dctx = dr1 * CMap(p + b.wo, d, d).transpose();
    MatrixXd dq(L, d), dk(L, d), dv(L, d);
    for (int h = 0; h < heads; ++h) {
      const MatrixXd& a = c.probs[static_cast<std::size_t>(h)];
      auto dctx_h = dctx.middleCols(h * dh, dh);
      MatrixXd da = dctx_h * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = a.transpose() * dctx_h;
      VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
      MatrixXd ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
      dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    GMap(g + b.wq, d, d).noalias() += c.attn_in.transpose() * dq;
    GVec(g + b.bq, d) += dq.colwise().sum().transpose();
    GMap(g + b.wk, d, d).noalias() += c.attn_in.transpose() * dk;
    GVec(g + b.bk, d) += dk.colwise().sum().transpose();
    GMap(g + b.wv, d, d).noalias() += c.attn_in.transpose() * dv;
    GVec(g + b.bv, d) += dv.colwise().sum().transpose();
    MatrixXd dattn_in = dq * CMap(p + b.wq, d, d).transpose();
    dattn_in.noalias() += dk * CMap(p + b.wk, d, d).transpose();
    dattn_in.noalias() += dv * CMap(p + b.wv, d, d).transpose();

    if (post) {
      dx = dr1 + dattn_in;
    } else {
      dx = dr1 + layer_norm_backward(dattn_in, ln1_g, c.ln1, GVec(g + b.ln1_g, d), GVec(g + b.ln1_b, d));
    }
  }

  // Input projection; positional encodings carry no parameters.
  GVec(g + layout_.b_in, d) += dx.colwise().sum().transpose();
  GMap gw_in(g + layout_.w_in, d, config_.input_dim);
  for (int t = 0; t < L; ++t) {
    for (const auto& [idx, val] : seq.entries[static_cast<std::size_t>(t)]) {
      gw_in.col(idx) += val * dx.row(t).transpose();
    }
  }
  return loss;
}

MatrixXd SurrogateModel::attention_weights(const EmbeddedSequence& seq, int layer, int head) const {
  if (layer < 0 || layer >= config_.n_layers || head < 0 || head >= config_.n_heads) {
    throw Error(ErrorCode::DimensionMismatch, "attention probe layer/head out of range");
  }
  if (seq.rows.cols() != config_.input_dim) {
    throw Error(ErrorCode::DimensionMismatch, "sequence width " + std::to_string(seq.rows.cols()) +
                                                  " does not match input_dim " + std::to_string(config_.input_dim));
  }
  SparseSequence sparse = sparsify(seq);
  Cache cache;
  run(sparse, &cache);
  const MatrixXd& a = cache.layers[static_cast<std::size_t>(layer)].probs[static_cast<std::size_t>(head)];
  MatrixXd out = MatrixXd::Zero(a.rows(), seq.rows.rows());
  for (Eigen::Index j = 0; j < a.cols(); ++j) out.col(sparse.positions[static_cast<std::size_t>(j)]) = a.col(j);
  return out;
}

// ---------------------------------------------------------------------------
// Batch API

namespace {

std::vector<SparseSequence> checked_sparse(const SurrogateModel& model, const std::vector<EmbeddedSequence>& batch) {
  std::vector<SparseSequence> out;
  out.reserve(batch.size());
  for (const EmbeddedSequence& s : batch) {
    if (s.rows.cols() != model.config().input_dim) {
      throw Error(ErrorCode::DimensionMismatch, "sequence width " + std::to_string(s.rows.cols()) +
                                                    " does not match input_dim " +
                                                    std::to_string(model.config().input_dim));
    }
    if (s.rows.rows() > model.config().max_seq_len) {
      throw Error(ErrorCode::DimensionMismatch, "sequence length " + std::to_string(s.rows.rows()) +
                                                    " exceeds max_seq_len");
    }
    out.push_back(sparsify(s));
    if (out.back().length() == 0) throw Error(ErrorCode::EmptyMask, "sequence has no real tokens");
  }
  return out;
}

struct BatchWorkspace {
  std::vector<std::vector<double>> chunk_grads;
  std::vector<double> chunk_loss;
  std::vector<int> chunk_correct;
};

// Sums weight-scaled gradients of batch[order[begin..end)] into grad, in a
// fixed chunked order. Returns (sum of example losses, correct predictions).
std::pair<double, int> batch_gradient(const SurrogateModel& model, const std::vector<SparseSequence>& inputs,
                                      const std::vector<int>& labels, const std::vector<std::size_t>& order,
                                      std::size_t begin, std::size_t end, std::vector<double>& grad,
                                      BatchWorkspace& ws, int threads) {
  const std::size_t n = end - begin;
  const double weight = 1.0 / static_cast<double>(n);
  const std::size_t chunks = (n + kGradientChunk - 1) / kGradientChunk;
  if (ws.chunk_grads.size() < chunks) ws.chunk_grads.resize(chunks);
  ws.chunk_loss.assign(chunks, 0.0);
  ws.chunk_correct.assign(chunks, 0);
  parallel_for(
      chunks,
      [&](std::size_t ci) {
        std::vector<double>& g = ws.chunk_grads[ci];
        g.assign(grad.size(), 0.0);
        std::size_t lo = begin + ci * kGradientChunk;
        std::size_t hi = std::min(end, lo + kGradientChunk);
        for (std::size_t i = lo; i < hi; ++i) {
          std::size_t ex = order[i];
          double z = 0.0;
          ws.chunk_loss[ci] += model.accumulate_gradient(inputs[ex], labels[ex], weight, g, &z);
          if ((z >= 0.0 ? 1 : 0) == labels[ex]) ++ws.chunk_correct[ci];
        }
      },
      threads);
  double loss = 0.0;
  int correct = 0;
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    const std::vector<double>& g = ws.chunk_grads[ci];
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
    loss += ws.chunk_loss[ci];
    correct += ws.chunk_correct[ci];
  }
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "training loss is not finite");
  return {loss, correct};
}

}  // namespace

Eigen::VectorXd forward_sparse(const SurrogateModel& model, const std::vector<SparseSequence>& batch, int threads) {
  VectorXd out(static_cast<Eigen::Index>(batch.size()));
  parallel_for(
      batch.size(), [&](std::size_t i) { out(static_cast<Eigen::Index>(i)) = model.logit(batch[i]); }, threads);
  return out;
}

Eigen::VectorXd forward(const SurrogateModel& model, const std::vector<EmbeddedSequence>& batch) {
  return forward_sparse(model, checked_sparse(model, batch));
}

Eigen::VectorXd predict_proba(const SurrogateModel& model, const std::vector<EmbeddedSequence>& batch) {
  return forward(model, batch).unaryExpr([](double z) { return sigmoid(z); });
}

LossAndGradients loss_and_gradients(const SurrogateModel& model, const std::vector<SparseSequence>& batch,
                                    const std::vector<int>& labels, int threads) {
  if (batch.size() != labels.size()) throw Error(ErrorCode::DimensionMismatch, "batch and labels differ in length");
  if (batch.empty()) throw Error(ErrorCode::DimensionMismatch, "empty batch");
  LossAndGradients out;
  out.gradients.assign(model.parameters().size(), 0.0);
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  BatchWorkspace ws;
  auto [sum, correct] = batch_gradient(model, batch, labels, order, 0, batch.size(), out.gradients, ws, threads);
  (void)correct;
  out.loss = sum / static_cast<double>(batch.size());
  return out;
}

LossAndGradients loss_and_gradients(const SurrogateModel& model, const std::vector<EmbeddedSequence>& batch,
                                    const std::vector<int>& labels) {
  return loss_and_gradients(model, checked_sparse(model, batch), labels);
}

TrainResult train(SurrogateModel model, const std::vector<SparseSequence>& inputs, const std::vector<int>& labels,
                  const TrainConfig& config, int threads,
                  const std::function<void(int, const EpochStats&)>& on_epoch) {
  config.validate();
  if (inputs.size() != labels.size()) throw Error(ErrorCode::DimensionMismatch, "inputs and labels differ in length");
  const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
  if (!has_pos || !has_neg) throw Error(ErrorCode::DegenerateDataset, "training data must contain both classes");

  TrainResult result;
  std::vector<std::size_t> order(inputs.size());
  std::vector<double> grad(model.parameters().size());
  BatchWorkspace ws;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(config.shuffle_seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss = 0.0;
    int correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      std::size_t end = std::min(order.size(), begin + bs);
      std::fill(grad.begin(), grad.end(), 0.0);
      auto [l, c] = batch_gradient(model, inputs, labels, order, begin, end, grad, ws, threads);
      loss += l;
      correct += c;
      std::vector<double>& params = model.parameters();
      for (std::size_t j = 0; j < params.size(); ++j) params[j] -= config.learning_rate * grad[j];
    }
    EpochStats stats{loss / static_cast<double>(inputs.size()),
                     static_cast<double>(correct) / static_cast<double>(inputs.size())};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string checkpoint_bytes(const SurrogateModel& model) {
  const ModelConfig& c = model.config();
  std::string out(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  for (int v : {c.input_dim, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  put_u32(out, c.norm == NormPlacement::Post ? 0u : 1u);
  put_f64(out, c.dropout);
  out.append(reinterpret_cast<const char*>(model.catalog_hash().data()), model.catalog_hash().size());
  put_u32(out, static_cast<std::uint32_t>(kParamKeyCount));
  for (std::size_t k = 0; k < kParamKeyCount; ++k) {
    const FloatNormalizer::Stat& s = model.normalizer().stat(static_cast<ParamKey>(k));
    put_f64(out, s.mean);
    put_f64(out, s.stddev);
  }
  put_u64(out, model.parameters().size());
  out.append(reinterpret_cast<const char*>(model.parameters().data()), model.parameters().size() * sizeof(double));
  ContentHash digest = sha256(out);
  out.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  return out;
}

void save_checkpoint(const SurrogateModel& model, std::ostream& out) {
  std::string bytes = checkpoint_bytes(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "failed to write checkpoint");
}

SurrogateModel load_checkpoint(const std::string& bytes, const ContentHash* expected_hash, bool allow_hash_mismatch) {
  Reader r(bytes);
  if (std::memcmp(r.take(8, "magic"), kCheckpointMagic, 8) != 0) {
    throw Error(ErrorCode::MagicMismatch, "not a surrogate checkpoint (bad magic)");
  }
  auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionMismatch, "checkpoint format version " + std::to_string(version) +
                                                " is not supported (expected " +
                                                std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig c;
  for (int* field : {&c.input_dim, &c.d_model, &c.n_layers, &c.n_heads, &c.d_ff, &c.max_seq_len}) {
    *field = static_cast<int>(r.get<std::uint32_t>("config"));
  }
  std::uint32_t norm = r.get<std::uint32_t>("config");
  if (norm > 1) throw Error(ErrorCode::Config, "checkpoint has an unknown norm placement");
  c.norm = norm == 0 ? NormPlacement::Post : NormPlacement::Pre;
  c.dropout = r.get<double>("config");
  ContentHash hash;
  std::memcpy(hash.data(), r.take(hash.size(), "catalog hash"), hash.size());
  auto stat_count = r.get<std::uint32_t>("normalization stats");
  if (stat_count != kParamKeyCount) throw Error(ErrorCode::Config, "checkpoint normalization table has wrong size");
  FloatNormalizer normalizer;
  for (std::size_t k = 0; k < kParamKeyCount; ++k) {
    FloatNormalizer::Stat s;
    s.mean = r.get<double>("normalization stats");
    s.stddev = r.get<double>("normalization stats");
    normalizer.set_stat(static_cast<ParamKey>(k), s);
  }
  auto count = r.get<std::uint64_t>("parameter count");
  if (count > r.remaining() / sizeof(double)) throw Error(ErrorCode::Truncation, "checkpoint truncated in parameters");
  std::vector<double> params(count);
  std::memcpy(params.data(), r.take(count * sizeof(double), "parameters"), count * sizeof(double));
  const std::size_t body = r.pos();
  ContentHash stored;
  std::memcpy(stored.data(), r.take(stored.size(), "checksum"), stored.size());
  if (r.remaining() != 0) throw Error(ErrorCode::Truncation, "unexpected bytes after the checkpoint checksum");
  if (sha256(std::string_view(bytes.data(), body)) != stored) {
    throw Error(ErrorCode::ChecksumMismatch, "checkpoint checksum does not match its contents");
  }
  if (expected_hash && !allow_hash_mismatch && *expected_hash != hash) {
    throw Error(ErrorCode::HashMismatch, "checkpoint was trained against catalog " + hash_hex(hash) +
                                             ", not the loaded catalog " + hash_hex(*expected_hash));
  }
  for (double v : params) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "checkpoint contains non-finite parameters");
  }
  SurrogateModel model(c, hash, std::move(params));
  model.set_normalizer(normalizer);
  return model;
}

SurrogateModel load_checkpoint(std::istream& in, const ContentHash* expected_hash, bool allow_hash_mismatch) {
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_checkpoint(bytes, expected_hash, allow_hash_mismatch);
}

}  // namespace uav
