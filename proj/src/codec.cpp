#include "uavdesign/codec.hpp"

#include <cmath>

#include "uavdesign/error.hpp"
#include "uavdesign/io.hpp"

namespace uav {

namespace {

using json = nlohmann::json;

void flatten_into(const DesignNode& node, TokenSequence& out, bool is_root) {
  out.push_back({ParamKey::NodeType, node.kind.literal()});
  auto layout = param_layout(node.kind.type);
  for (std::size_t i = 0; i < layout.size() && i < node.params.size(); ++i) {
    out.push_back({node.params[i].key, node.params[i].value});
  }
  for (const DesignNode& child : node.children) flatten_into(child, out, false);
  if (is_root) {
    for (std::size_t i = layout.size(); i < node.params.size(); ++i) {
      out.push_back({node.params[i].key, node.params[i].value});
    }
  }
}

std::string describe(const Token& t) {
  std::string s = "{" + std::string(key_name(t.key)) + ": ";
  if (const auto* sym = std::get_if<std::string>(&t.value)) {
    s += *sym;
  } else {
    s += format_double(std::get<double>(t.value));
  }
  return s + "}";
}

class Parser {
 public:
  Parser(const TokenSequence& seq, const Catalog& catalog) : seq_(seq), catalog_(catalog) {}

  DesignNode run() {
    DesignNode root = node(true);
    if (pos_ < seq_.size()) {
      const Token& t = seq_[pos_];
      if (t.key != ParamKey::BatteryType) {
        throw Error(ErrorCode::UnexpectedKey, "unexpected key at position " + std::to_string(pos_ + 1) + ": " +
                                                  describe(t) + " after the root subtree (expected batteryType)");
      }
      ++pos_;
      root.params.push_back({t.key, resolve(t)});
    }
    if (pos_ < seq_.size()) {
      throw Error(ErrorCode::UnexpectedKey, "unexpected key at position " + std::to_string(pos_ + 1) + ": " +
                                                describe(seq_[pos_]) + " after the end of the design");
    }
    return root;
  }

 private:
  const Token& next(std::string_view expecting) {
    if (pos_ >= seq_.size()) {
      throw Error(ErrorCode::TruncatedSequence, "sequence truncated at position " + std::to_string(pos_ + 1) +
                                                    ": expected " + std::string(expecting));
    }
    return seq_[pos_++];
  }

  [[noreturn]] void unexpected(const Token& t, ParamKey expected) const {
    throw Error(ErrorCode::UnexpectedKey, "unexpected key at position " + std::to_string(pos_) + ": " + describe(t) +
                                              " (expected " + std::string(key_name(expected)) + ")");
  }

  ParamValue resolve(const Token& t) const {
    if (!is_categorical(t.key)) {
      if (!std::holds_alternative<double>(t.value)) {
        throw Error(ErrorCode::UnknownValue,
                    "unknown value at position " + std::to_string(pos_) + ": " + describe(t) + " must be numeric");
      }
      return t.value;
    }
    const auto* sym = std::get_if<std::string>(&t.value);
    if (sym == nullptr) {
      throw Error(ErrorCode::UnknownValue,
                  "unknown value at position " + std::to_string(pos_) + ": " + describe(t) + " must be categorical");
    }
    auto want = referenced_kind(t.key);
    const ComponentRecord* rec = catalog_.find(*sym);
    if (rec == nullptr || (want && rec->kind != *want)) {
      throw Error(ErrorCode::UnknownValue, "unknown value at position " + std::to_string(pos_) + ": " + describe(t));
    }
    return t.value;
  }

  DesignNode node(bool is_root) {
    const Token& head = next("node_type");
    if (head.key != ParamKey::NodeType) unexpected(head, ParamKey::NodeType);
    const auto* literal = std::get_if<std::string>(&head.value);
    auto kind = literal ? NodeKind::from_literal(*literal) : std::nullopt;
    if (!kind) {
      throw Error(ErrorCode::UnknownValue, "unknown value at position " + std::to_string(pos_) + ": " + describe(head));
    }
    if (kind->type == NodeType::Fuselage && !is_root) {
      throw Error(ErrorCode::UnknownValue,
                  "unknown value at position " + std::to_string(pos_) + ": Fuselage is only valid as the root");
    }
    if (is_root && (kind->type == NodeType::PropArm || kind->type == NodeType::Wing)) {
      throw Error(ErrorCode::UnknownValue, "unknown value at position " + std::to_string(pos_) + ": " + *literal +
                                               " cannot be the root");
    }
    DesignNode n;
    n.kind = *kind;
    for (ParamKey key : param_layout(kind->type)) {
      const Token& t = next(key_name(key));
      if (t.key != key) unexpected(t, key);
      n.params.push_back({key, resolve(t)});
    }
    if (kind->type == NodeType::Hub) {
      int count = kind->symmetric ? 1 : kind->arity;
      n.children.reserve(static_cast<std::size_t>(count));
      for (int i = 0; i < count; ++i) n.children.push_back(node(false));
    }
    return n;
  }

  const TokenSequence& seq_;
  const Catalog& catalog_;
  std::size_t pos_ = 0;
};

}  // namespace

TokenSequence flatten(const DesignNode& tree) {
  ValidationReport report = validate_structure(tree);
  if (!report.valid) {
    const Violation& v = report.violations.front();
    throw Error(ErrorCode::InvalidTree, "flatten: invalid tree at " + v.path + " [" + v.rule + "]: " + v.message);
  }
  TokenSequence out;
  out.reserve(sequence_length(tree));
  flatten_into(tree, out, true);
  return out;
}

DesignNode parse(const TokenSequence& seq, const Catalog& catalog) {
  if (seq.empty()) throw Error(ErrorCode::TruncatedSequence, "empty sequence");
  return Parser(seq, catalog).run();
}

json to_json(const TokenSequence& seq) {
  json arr = json::array();
  for (const Token& t : seq) {
    json obj = json::object();
    if (const auto* sym = std::get_if<std::string>(&t.value)) {
      obj[std::string(key_name(t.key))] = *sym;
    } else {
      obj[std::string(key_name(t.key))] = std::get<double>(t.value);
    }
    arr.push_back(std::move(obj));
  }
  return arr;
}

TokenSequence sequence_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::Parse, "design must be a JSON array of key-value objects");
  TokenSequence seq;
  seq.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& obj = j[i];
    if (!obj.is_object() || obj.size() != 1) {
      throw Error(ErrorCode::Parse, "token " + std::to_string(i + 1) + " must be a single key-value object");
    }
    auto it = obj.begin();
    auto key = key_from_name(it.key());
    if (!key) throw Error(ErrorCode::Parse, "token " + std::to_string(i + 1) + " has unknown key '" + it.key() + "'");
    if (it->is_string()) {
      seq.push_back({*key, it->get<std::string>()});
    } else if (it->is_number()) {
      seq.push_back({*key, it->get<double>()});
    } else {
      throw Error(ErrorCode::Parse, "token " + std::to_string(i + 1) + " value must be a string or number");
    }
  }
  return seq;
}

std::string to_json_line(const TokenSequence& seq) { return to_json(seq).dump(); }

std::string to_literal(const TokenSequence& seq) {
  std::string s = "[";
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i > 0) s += ", ";
    s += "{'";
    s += key_name(seq[i].key);
    s += "': ";
    if (const auto* sym = std::get_if<std::string>(&seq[i].value)) {
      s += "'" + *sym + "'";
    } else {
      s += format_double(std::get<double>(seq[i].value));
    }
    s += "}";
  }
  return s + "]";
}

FloatNormalizer FloatNormalizer::fit(const std::vector<TokenSequence>& sequences) {
  std::array<double, kParamKeyCount> sum{};
  std::array<double, kParamKeyCount> count{};
  for (const auto& seq : sequences) {
    for (const Token& t : seq) {
      if (const auto* x = std::get_if<double>(&t.value)) {
        sum[static_cast<std::size_t>(t.key)] += *x;
        count[static_cast<std::size_t>(t.key)] += 1.0;
      }
    }
  }
  std::array<double, kParamKeyCount> mean{};
  for (std::size_t k = 0; k < mean.size(); ++k) mean[k] = count[k] > 0 ? sum[k] / count[k] : 0.0;
  std::array<double, kParamKeyCount> sq{};
  for (const auto& seq : sequences) {
    for (const Token& t : seq) {
      if (const auto* x = std::get_if<double>(&t.value)) {
        double d = *x - mean[static_cast<std::size_t>(t.key)];
        sq[static_cast<std::size_t>(t.key)] += d * d;
      }
    }
  }
  FloatNormalizer out;
  for (std::size_t k = 0; k < mean.size(); ++k) {
    double sd = count[k] > 0 ? std::sqrt(sq[k] / count[k]) : 0.0;
    out.stats_[k] = {mean[k], sd > 0.0 ? sd : 1.0};
  }
  return out;
}

double FloatNormalizer::normalize(ParamKey key, double x) const {
  const Stat& s = stat(key);
  return (x - s.mean) / s.stddev;
}

double FloatNormalizer::denormalize(ParamKey key, double z) const {
  const Stat& s = stat(key);
  return z * s.stddev + s.mean;
}

void FloatNormalizer::set_stat(ParamKey key, Stat s) {
  if (!(s.stddev > 0.0) || !std::isfinite(s.stddev) || !std::isfinite(s.mean)) {
    throw Error(ErrorCode::Config, "normalization for " + std::string(key_name(key)) + " needs finite mean and stddev > 0");
  }
  stats_[static_cast<std::size_t>(key)] = s;
}

EmbeddingLayout EmbeddingLayout::of(const Catalog& catalog) {
  return {catalog.key_classes(), static_cast<int>(catalog.value_vocab().size()),
          static_cast<int>(catalog.attribute_schema().size())};
}

int EmbeddedSequence::length() const {
  int n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

int EmbeddedSequence::last_real() const {
  for (int i = static_cast<int>(mask.size()) - 1; i >= 0; --i) {
    if (mask[static_cast<std::size_t>(i)]) return i;
  }
  return -1;
}

namespace {

void embed_into(const Token& token, const Catalog& catalog, const FloatNormalizer& normalizer,
                const EmbeddingLayout& layout, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) {
  int key = static_cast<int>(token.key);
  if (key >= layout.key_classes) {
    throw Error(ErrorCode::UnknownValue, "unknown key '" + std::string(key_name(token.key)) + "'");
  }
  row[layout.key_offset() + key] = 1.0;
  if (const auto* sym = std::get_if<std::string>(&token.value)) {
    auto idx = catalog.value_index(*sym);
    if (!idx) throw Error(ErrorCode::UnknownValue, "unknown value '" + *sym + "'");
    row[layout.value_offset() + *idx] = 1.0;
    if (referenced_kind(token.key)) {
      std::vector<double> attrs = catalog.attribute_vector(*sym);
      for (std::size_t a = 0; a < attrs.size(); ++a) row[layout.attribute_offset() + static_cast<int>(a)] = attrs[a];
    }
  } else {
    auto idx = catalog.value_index(Catalog::kNumericValue);
    if (!idx) throw Error(ErrorCode::UnknownValue, "catalog has no numeric value class");
    row[layout.value_offset() + *idx] = 1.0;
    row[layout.float_offset()] = normalizer.normalize(token.key, std::get<double>(token.value));
  }
}

}  // namespace

RawTokenVector embed_token(const Token& token, const Catalog& catalog, const FloatNormalizer& normalizer) {
  EmbeddingLayout layout = EmbeddingLayout::of(catalog);
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(layout.width());
  embed_into(token, catalog, normalizer, layout, row);
  return row.transpose();
}

EmbeddedSequence embed_sequence(const TokenSequence& seq, const Catalog& catalog, std::size_t pad_to,
                                const FloatNormalizer& normalizer) {
  if (pad_to < seq.size()) {
    throw Error(ErrorCode::PadTooSmall,
                "pad_to " + std::to_string(pad_to) + " is smaller than sequence length " + std::to_string(seq.size()));
  }
  EmbeddingLayout layout = EmbeddingLayout::of(catalog);
  EmbeddedSequence out;
  out.rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pad_to), layout.width());
  out.mask.assign(pad_to, false);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    embed_into(seq[i], catalog, normalizer, layout, out.rows.row(static_cast<Eigen::Index>(i)));
    out.mask[i] = true;
  }
  return out;
}

}  // namespace uav
