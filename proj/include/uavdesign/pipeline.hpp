#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uavdesign/catalog.hpp"
#include "uavdesign/codec.hpp"
#include "uavdesign/generator.hpp"
#include "uavdesign/physics.hpp"
#include "uavdesign/surrogate.hpp"

namespace uav {

struct LabeledRecord {
  TokenSequence design;
  int label = 0;
  HoverResult hover;
};

struct LabeledDataset {
  std::vector<LabeledRecord> records;
  std::vector<bool> is_train;  // parallel to records
  GeneratorConfig generator;
  std::uint64_t first_index = 0;
  ContentHash catalog_hash{};
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> test_indices() const;
};

// Exactly round(fraction * n) records go to the training side, chosen by a
// seeded shuffle.
std::vector<bool> split_assignment(std::size_t n, std::uint64_t split_seed, double train_fraction = 0.8);

// Throws DegenerateDataset unless both splits contain both classes.
void check_splits(const std::vector<LabeledRecord>& records, const std::vector<bool>& is_train);

LabeledDataset build_dataset(const GeneratorConfig& gen, std::size_t n, const Catalog& catalog,
                             const PhysicsConstants& constants, std::uint64_t split_seed, int threads = 1,
                             double train_fraction = 0.8);

// Dataset file lines: {"design": [...], "hover_time_s": f, "label": 0|1, "failure_reason": str|null}.
std::string dataset_line(const LabeledRecord& record);
// Reads "design" and, when present, the label fields. Errors name the line.
LabeledRecord parse_dataset_line(const std::string& line, std::size_t line_number, bool require_label);
// Blank lines are skipped; line_numbers (optional) receives each record's line.
std::vector<LabeledRecord> read_dataset(const std::string& path, bool require_label,
                                        std::vector<std::size_t>* line_numbers = nullptr);

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct EvalReport {
  double threshold = 0.5;
  Confusion confusion;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::vector<PrPoint> pr_curve;
};

// Grid used for PR curves and threshold calibration: i / 100 for i = 0..99.
std::vector<double> threshold_grid();

// Predicted positive iff probability >= threshold. Precision is 1 when nothing
// is predicted positive; recall is 1 when there are no positives.
Confusion confusion_at(const std::vector<double>& probabilities, const std::vector<int>& labels, double threshold);
double precision_of(const Confusion& c);
double recall_of(const Confusion& c);
double accuracy_of(const Confusion& c);

EvalReport evaluate_scores(const std::vector<double>& probabilities, const std::vector<int>& labels,
                           double threshold);
EvalReport evaluate(const SurrogateModel& model, const std::vector<SparseSequence>& inputs,
                    const std::vector<int>& labels, double threshold, int threads = 1);

// Largest grid threshold whose recall >= min_recall.
double choose_threshold(const EvalReport& report, double min_recall);

struct KeptDesign {
  std::uint64_t index = 0;
  double probability = 0.0;
  TokenSequence design;
};

struct VerifyReport {
  std::size_t sample_size = 0;
  std::size_t n_hover = 0;
  double hover_fraction = 0.0;
  std::map<int, std::size_t> propeller_histogram;  // over hovering designs
  std::map<int, std::size_t> wing_histogram;
};

struct FilterReport {
  std::uint64_t start_index = 0;
  std::size_t n_proposed = 0;
  std::size_t n_kept = 0;
  double threshold = 0.0;
  std::vector<KeptDesign> kept;
  std::optional<VerifyReport> verification;
};

// Streams designs start_index .. start_index + n - 1 through the surrogate,
// holding only one block of rejected designs at a time.
FilterReport filter_designs(const SurrogateModel& model, const GeneratorConfig& gen, std::uint64_t start_index,
                            std::size_t n, double threshold, const Catalog& catalog, int threads = 1);

// Oracle-labels a seeded uniform subsample of the kept designs.
VerifyReport verify_kept(const std::vector<KeptDesign>& kept, const Catalog& catalog,
                         const PhysicsConstants& constants, std::size_t sample_size, std::uint64_t seed = 0,
                         int threads = 1);

// Days of oracle time at minutes_per_eval, rounded to 0.1 day.
std::pair<double, double> estimate_compute_savings(std::size_t n_proposed, std::size_t n_kept,
                                                   double minutes_per_eval = 4.0);

std::string pr_curve_csv(const EvalReport& report);
std::string histogram_csv(const std::map<int, std::size_t>& histogram);
std::string history_csv(const std::vector<EpochStats>& history);
std::string kept_line(const KeptDesign& kept);
KeptDesign parse_kept_line(const std::string& line, std::size_t line_number);
std::string filter_summary(const FilterReport& report);

}  // namespace uav
