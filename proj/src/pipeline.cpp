#include "uavdesign/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "uavdesign/error.hpp"
#include "uavdesign/io.hpp"
#include "uavdesign/parallel.hpp"
#include "uavdesign/rng.hpp"

namespace uav {

namespace {

using json = nlohmann::json;

constexpr std::size_t kFilterBlock = 2048;
constexpr std::uint64_t kSplitStream = 0x5EED5B117ULL;

std::vector<std::size_t> indices_where(const std::vector<bool>& flags, bool want) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] == want) out.push_back(i);
  }
  return out;
}

double round_tenth(double x) { return std::round(x * 10.0) / 10.0; }

}  // namespace

std::vector<std::size_t> LabeledDataset::train_indices() const { return indices_where(is_train, true); }
std::vector<std::size_t> LabeledDataset::test_indices() const { return indices_where(is_train, false); }

std::vector<bool> split_assignment(std::size_t n, std::uint64_t split_seed, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::Config, "train_fraction must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(split_seed, kSplitStream);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<bool> is_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;
  return is_train;
}

void check_splits(const std::vector<LabeledRecord>& records, const std::vector<bool>& is_train) {
  int seen[2][2] = {{0, 0}, {0, 0}};  // [train][label]
  for (std::size_t i = 0; i < records.size(); ++i) seen[is_train[i] ? 1 : 0][records[i].label] = 1;
  if (!seen[1][0] || !seen[1][1]) throw Error(ErrorCode::DegenerateDataset, "training split lacks one of the classes");
  if (!seen[0][0] || !seen[0][1]) throw Error(ErrorCode::DegenerateDataset, "test split lacks one of the classes");
}

LabeledDataset build_dataset(const GeneratorConfig& gen, std::size_t n, const Catalog& catalog,
                             const PhysicsConstants& constants, std::uint64_t split_seed, int threads,
                             double train_fraction) {
  if (n < 10) throw Error(ErrorCode::Config, "build_dataset needs n >= 10");
  gen.validate();
  constants.validate();
  LabeledDataset ds;
  ds.generator = gen;
  ds.catalog_hash = catalog.content_hash();
  ds.split_seed = split_seed;
  ds.train_fraction = train_fraction;
  ds.records.resize(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        DesignNode tree = sample_design(gen, i, catalog);
        auto [label, hover] = label_design(tree, catalog, constants);
        ds.records[i] = LabeledRecord{flatten(tree), label, hover};
      },
      threads);
  ds.is_train = split_assignment(n, split_seed, train_fraction);
  check_splits(ds.records, ds.is_train);
  return ds;
}

std::string dataset_line(const LabeledRecord& r) {
  json j;
  j["design"] = to_json(r.design);
  j["hover_time_s"] = r.hover.hover_time_s;
  j["label"] = r.label;
  if (r.hover.failure_reason) {
    j["failure_reason"] = std::string(failure_name(*r.hover.failure_reason));
  } else {
    j["failure_reason"] = nullptr;
  }
  return j.dump();
}

LabeledRecord parse_dataset_line(const std::string& line, std::size_t line_number, bool require_label) {
  auto fail = [&](const std::string& what) {
    return Error(ErrorCode::Parse, "line " + std::to_string(line_number) + ": " + what);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(std::string("malformed JSON (") + e.what() + ")");
  }
  if (!j.is_object() || !j.contains("design")) throw fail("expected an object with a \"design\" field");
  LabeledRecord r;
  try {
    r.design = sequence_from_json(j["design"]);
  } catch (const Error& e) {
    throw fail(e.what());
  }
  if (r.design.empty()) throw fail("design has no tokens");
  if (j.contains("label")) {
    const json& l = j["label"];
    if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1)) throw fail("label must be 0 or 1");
    r.label = l.get<int>();
    r.hover.can_hover = r.label == 1;
    if (j.contains("hover_time_s")) {
      if (!j["hover_time_s"].is_number()) throw fail("hover_time_s must be a number");
      r.hover.hover_time_s = j["hover_time_s"].get<double>();
    }
    if (j.contains("failure_reason") && !j["failure_reason"].is_null()) {
      if (!j["failure_reason"].is_string()) throw fail("failure_reason must be a string or null");
      auto reason = failure_from_name(j["failure_reason"].get<std::string>());
      if (!reason) throw fail("unknown failure_reason '" + j["failure_reason"].get<std::string>() + "'");
      r.hover.failure_reason = reason;
    }
  } else if (require_label) {
    throw fail("record has no label");
  }
  return r;
}

std::vector<LabeledRecord> read_dataset(const std::string& path, bool require_label,
                                        std::vector<std::size_t>* line_numbers) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::vector<LabeledRecord> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    out.push_back(parse_dataset_line(line, line_number, require_label));
    if (line_numbers) line_numbers->push_back(line_number);
  }
  return out;
}

std::vector<double> threshold_grid() {
  std::vector<double> grid(100);
  for (int i = 0; i < 100; ++i) grid[static_cast<std::size_t>(i)] = i / 100.0;
  return grid;
}

Confusion confusion_at(const std::vector<double>& probabilities, const std::vector<int>& labels, double threshold) {
  if (probabilities.size() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "probabilities and labels differ in length");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = probabilities[i] >= threshold;
    if (predicted) {
      (labels[i] == 1 ? c.tp : c.fp) += 1;
    } else {
      (labels[i] == 1 ? c.fn : c.tn) += 1;
    }
  }
  return c;
}

double precision_of(const Confusion& c) {
  return c.tp + c.fp == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall_of(const Confusion& c) {
  return c.tp + c.fn == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double accuracy_of(const Confusion& c) {
  return c.total() == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

EvalReport evaluate_scores(const std::vector<double>& probabilities, const std::vector<int>& labels,
                           double threshold) {
  if (labels.empty()) throw Error(ErrorCode::DegenerateDataset, "evaluation set is empty");
  EvalReport r;
  r.threshold = threshold;
  r.confusion = confusion_at(probabilities, labels, threshold);
  r.accuracy = accuracy_of(r.confusion);
  r.precision = precision_of(r.confusion);
  r.recall = recall_of(r.confusion);

  // One sort, then a sweep over the grid: the count of scores >= t per class.
  std::vector<std::pair<double, int>> scored(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) scored[i] = {probabilities[i], labels[i]};
  std::sort(scored.begin(), scored.end());
  long positives = 0;
  for (int l : labels) positives += l;
  const long negatives = static_cast<long>(labels.size()) - positives;
  long below_pos = 0, below_neg = 0;
  std::size_t k = 0;
  for (double t : threshold_grid()) {
    while (k < scored.size() && scored[k].first < t) {
      (scored[k].second == 1 ? below_pos : below_neg) += 1;
      ++k;
    }
    Confusion c{positives - below_pos, negatives - below_neg, below_neg, below_pos};
    r.pr_curve.push_back({t, precision_of(c), recall_of(c)});
  }
  return r;
}

EvalReport evaluate(const SurrogateModel& model, const std::vector<SparseSequence>& inputs,
                    const std::vector<int>& labels, double threshold, int threads) {
  Eigen::VectorXd z = forward_sparse(model, inputs, threads);
  std::vector<double> p(static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) p[static_cast<std::size_t>(i)] = sigmoid(z(i));
  return evaluate_scores(p, labels, threshold);
}

double choose_threshold(const EvalReport& report, double min_recall) {
  if (!(min_recall > 0.0 && min_recall <= 1.0)) throw Error(ErrorCode::Config, "min_recall must lie in (0, 1]");
  std::optional<double> best;
  for (const PrPoint& pt : report.pr_curve) {
    if (pt.recall >= min_recall && (!best || pt.threshold > *best)) best = pt.threshold;
  }
  if (!best) {
    throw Error(ErrorCode::RecallUnattainable,
                "no threshold on the curve reaches recall " + std::to_string(min_recall));
  }
  return *best;
}

FilterReport filter_designs(const SurrogateModel& model, const GeneratorConfig& gen, std::uint64_t start_index,
                            std::size_t n, double threshold, const Catalog& catalog, int threads) {
  if (model.catalog_hash() != catalog.content_hash()) {
    throw Error(ErrorCode::HashMismatch, "model was trained against catalog " + hash_hex(model.catalog_hash()) +
                                             ", not " + hash_hex(catalog.content_hash()));
  }
  gen.validate();
  FilterReport report;
  report.start_index = start_index;
  report.n_proposed = n;
  report.threshold = threshold;
  std::vector<TokenSequence> block;
  std::vector<double> prob;
  for (std::size_t begin = 0; begin < n; begin += kFilterBlock) {
    const std::size_t count = std::min(kFilterBlock, n - begin);
    block.assign(count, {});
    prob.assign(count, 0.0);
    parallel_for(
        count,
        [&](std::size_t i) {
          block[i] = flatten(sample_design(gen, start_index + begin + i, catalog));
          prob[i] = sigmoid(model.logit(encode_sparse(block[i], catalog, model.normalizer())));
        },
        threads);
    for (std::size_t i = 0; i < count; ++i) {
      if (prob[i] >= threshold) report.kept.push_back({start_index + begin + i, prob[i], std::move(block[i])});
    }
  }
  report.n_kept = report.kept.size();
  return report;
}

VerifyReport verify_kept(const std::vector<KeptDesign>& kept, const Catalog& catalog,
                         const PhysicsConstants& constants, std::size_t sample_size, std::uint64_t seed,
                         int threads) {
  if (sample_size > kept.size()) {
    throw Error(ErrorCode::Config, "verification sample " + std::to_string(sample_size) + " exceeds the " +
                                       std::to_string(kept.size()) + " kept designs");
  }
  VerifyReport v;
  v.sample_size = sample_size;
  if (sample_size == 0) return v;
  // Partial Fisher-Yates, then sorted so evaluation order follows the stream.
  std::vector<std::size_t> order(kept.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < sample_size; ++i) std::swap(order[i], order[i + rng.below(kept.size() - i)]);
  order.resize(sample_size);
  std::sort(order.begin(), order.end());

  std::vector<int> hover(sample_size, 0);
  std::vector<ComponentCounts> counts(sample_size);
  parallel_for(
      sample_size,
      [&](std::size_t i) {
        DesignNode tree = parse(kept[order[i]].design, catalog);
        hover[i] = label_design(tree, catalog, constants).first;
        counts[i] = count_components(tree);
      },
      threads);
  for (std::size_t i = 0; i < sample_size; ++i) {
    if (!hover[i]) continue;
    ++v.n_hover;
    ++v.propeller_histogram[counts[i].propellers];
    ++v.wing_histogram[counts[i].wings];
  }
  v.hover_fraction = static_cast<double>(v.n_hover) / static_cast<double>(sample_size);
  return v;
}

std::pair<double, double> estimate_compute_savings(std::size_t n_proposed, std::size_t n_kept,
                                                   double minutes_per_eval) {
  if (!(minutes_per_eval > 0.0)) throw Error(ErrorCode::Config, "minutes_per_eval must be > 0");
  constexpr double kMinutesPerDay = 60.0 * 24.0;
  return {round_tenth(static_cast<double>(n_proposed) * minutes_per_eval / kMinutesPerDay),
          round_tenth(static_cast<double>(n_kept) * minutes_per_eval / kMinutesPerDay)};
}

std::string pr_curve_csv(const EvalReport& report) {
  std::string out = "threshold,precision,recall\n";
  for (const PrPoint& p : report.pr_curve) {
    out += format_double(p.threshold) + "," + format_double(p.precision) + "," + format_double(p.recall) + "\n";
  }
  return out;
}

std::string histogram_csv(const std::map<int, std::size_t>& histogram) {
  std::string out = "count,frequency\n";
  for (const auto& [count, freq] : histogram) out += std::to_string(count) + "," + std::to_string(freq) + "\n";
  return out;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,loss,accuracy\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    out += std::to_string(i + 1) + "," + format_double(history[i].loss) + "," + format_double(history[i].accuracy) +
           "\n";
  }
  return out;
}

std::string kept_line(const KeptDesign& kept) {
  json j;
  j["index"] = kept.index;
  j["probability"] = kept.probability;
  j["design"] = to_json(kept.design);
  return j.dump();
}

KeptDesign parse_kept_line(const std::string& line, std::size_t line_number) {
  auto fail = [&](const std::string& what) {
    return Error(ErrorCode::Parse, "line " + std::to_string(line_number) + ": " + what);
  };
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(std::string("malformed JSON (") + e.what() + ")");
  }
  if (!j.is_object() || !j.contains("design")) throw fail("expected an object with a \"design\" field");
  KeptDesign k;
  if (j.contains("index")) {
    if (!j["index"].is_number_unsigned()) throw fail("index must be a non-negative integer");
    k.index = j["index"].get<std::uint64_t>();
  }
  if (j.contains("probability")) {
    if (!j["probability"].is_number()) throw fail("probability must be a number");
    k.probability = j["probability"].get<double>();
  }
  try {
    k.design = sequence_from_json(j["design"]);
  } catch (const Error& e) {
    throw fail(e.what());
  }
  if (k.design.empty()) throw fail("design has no tokens");
  return k;
}

std::string filter_summary(const FilterReport& r) {
  std::ostringstream s;
  const double keep_rate = r.n_proposed ? static_cast<double>(r.n_kept) / static_cast<double>(r.n_proposed) : 0.0;
  s << "designs proposed: " << r.n_proposed << " (indices " << r.start_index << ".."
    << (r.n_proposed ? r.start_index + r.n_proposed - 1 : r.start_index) << ")\n";
  s << "threshold: " << format_double(r.threshold) << "\n";
  s << "designs kept: " << r.n_kept << " (" << format_double(std::round(keep_rate * 10000.0) / 100.0) << "%)\n";
  if (r.verification) {
    const VerifyReport& v = *r.verification;
    s << "verified: " << v.sample_size << ", hovering: " << v.n_hover << " ("
      << format_double(std::round(v.hover_fraction * 10000.0) / 100.0) << "%)\n";
  }
  return s.str();
}

}  // namespace uav
