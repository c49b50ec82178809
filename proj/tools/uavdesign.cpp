// uavdesign: command-line front end for the generate -> label -> train ->
// eval -> filter -> report workflow. Every command writes its outputs
// atomically and leaves a <out>.manifest.json next to its main output.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "uavdesign/catalog.hpp"
#include "uavdesign/codec.hpp"
#include "uavdesign/error.hpp"
#include "uavdesign/generator.hpp"
#include "uavdesign/io.hpp"
#include "uavdesign/parallel.hpp"
#include "uavdesign/physics.hpp"
#include "uavdesign/pipeline.hpp"
#include "uavdesign/surrogate.hpp"

namespace {

using json = nlohmann::json;
using namespace uav;

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kUsage = 2, kData = 3, kDivergence = 4, kIo = 5 };

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config: return kUsage;
    case ErrorCode::NonFiniteLoss: return kDivergence;
    case ErrorCode::Io: return kIo;
    default: return kData;
  }
}

std::string utc_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string json_hash(const json& j) { return to_hex(sha256(j.dump())); }

json read_json_file(const std::string& path) {
  std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, "'" + path + "' is not valid JSON: " + e.what());
  }
}

// Collects what a run needs to be reproduced and writes it beside the output.
class Manifest {
 public:
  explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["tool_version"] = kVersion;
    j_["started_utc"] = utc_now();
    j_["threads"] = default_thread_count();
  }
  void config(const std::string& name, const json& value) {
    j_["configs"][name] = value;
    j_["config_hashes"][name] = json_hash(value);
  }
  void seed(const std::string& name, std::uint64_t value) { j_["seeds"][name] = value; }
  void input(const std::string& name, const std::string& path) { j_["inputs"][name] = path; }
  void output(const std::string& name, const std::string& path) { j_["outputs"][name] = path; }
  void field(const std::string& name, const json& value) { j_[name] = value; }
  void phase(const std::string& name, double seconds) { j_["timings_s"][name] = seconds; }
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  void write(const std::string& main_output) {
    j_["timings_s"]["total"] = elapsed();
    write_file_atomic(main_output + ".manifest.json", j_.dump(2) + "\n");
  }

 private:
  json j_;
  std::chrono::steady_clock::time_point start_;
};

struct Common {
  std::string catalog_path = std::string(UAV_DATA_DIR) + "/catalog.jsonl";
};

Catalog load_catalog(const Common& common, Manifest& m) {
  Catalog c = Catalog::load_file(common.catalog_path);
  m.input("catalog", common.catalog_path);
  m.field("catalog_hash", hash_hex(c.content_hash()));
  return c;
}

GeneratorConfig load_generator(const std::string& path, Manifest& m) {
  GeneratorConfig g = path.empty() ? GeneratorConfig{} : GeneratorConfig::from_json(read_json_file(path));
  if (!path.empty()) m.input("generator_config", path);
  return g;
}

PhysicsConstants load_constants(const std::string& path, Manifest& m) {
  PhysicsConstants c = path.empty() ? PhysicsConstants{} : PhysicsConstants::from_json(read_json_file(path));
  if (!path.empty()) m.input("constants", path);
  m.config("constants", c.to_json());
  return c;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::size_t count = 0;
  std::uint64_t start = 0;
};

void cmd_generate(const Common& common, const GenerateArgs& a) {
  Manifest m("generate");
  Catalog catalog = load_catalog(common, m);
  GeneratorConfig gen = load_generator(a.config, m);
  if (a.seed) gen.seed = *a.seed;
  gen.validate();
  m.config("generator", gen.to_json());
  m.seed("generator", gen.seed);
  m.field("count", a.count);
  m.field("start_index", a.start);
  const int threads = default_thread_count();
  write_file_atomic(a.out, [&](std::ostream& os) {
    constexpr std::size_t kBlock = 4096;
    for (std::size_t begin = 0; begin < a.count; begin += kBlock) {
      std::size_t n = std::min(kBlock, a.count - begin);
      std::vector<std::string> lines(n);
      parallel_for(
          n,
          [&](std::size_t i) {
            DesignNode t = sample_design(gen, a.start + begin + i, catalog);
            lines[i] = json{{"design", to_json(flatten(t))}}.dump();
          },
          threads);
      for (const std::string& l : lines) os << l << '\n';
    }
  });
  m.output("designs", a.out);
  m.write(a.out);
  std::cout << "wrote " << a.count << " designs to " << a.out << "\n";
}

// ---------------------------------------------------------------------------

struct LabelArgs {
  std::string in, out, constants;
};

void cmd_label(const Common& common, const LabelArgs& a) {
  Manifest m("label");
  Catalog catalog = load_catalog(common, m);
  PhysicsConstants constants = load_constants(a.constants, m);
  m.input("designs", a.in);
  std::vector<std::size_t> line_numbers;
  std::vector<LabeledRecord> records = read_dataset(a.in, false, &line_numbers);
  std::vector<std::string> lines(records.size());
  std::vector<std::string> errors(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    try {
      DesignNode tree = parse(records[i].design, catalog);
      auto [label, hover] = label_design(tree, catalog, constants);
      records[i].label = label;
      records[i].hover = hover;
      lines[i] = dataset_line(records[i]);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  std::size_t positives = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!errors[i].empty()) {
      throw Error(ErrorCode::Parse, "line " + std::to_string(line_numbers[i]) + ": " + errors[i]);
    }
    positives += static_cast<std::size_t>(records[i].label);
  }
  std::string body;
  for (const std::string& l : lines) body += l + "\n";
  write_file_atomic(a.out, body);
  m.field("records", records.size());
  m.field("positives", positives);
  m.output("dataset", a.out);
  m.write(a.out);
  std::cout << "labelled " << records.size() << " designs, " << positives << " hover\n";
}

// ---------------------------------------------------------------------------

struct SplitArgs {
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;
};

struct TrainArgs {
  std::string data, model_out, model_config, history_out;
  int epochs = 2500;
  double lr = 0.01;
  int batch_size = 128;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> shuffle_seed;
  SplitArgs split;
};

std::vector<SparseSequence> encode_all(const std::vector<LabeledRecord>& records,
                                       const std::vector<std::size_t>& idx, const Catalog& catalog,
                                       const FloatNormalizer& normalizer, std::vector<int>* labels) {
  std::vector<SparseSequence> out(idx.size());
  parallel_for(idx.size(), [&](std::size_t i) {
    parse(records[idx[i]].design, catalog);  // rejects designs the catalog cannot resolve
    out[i] = encode_sparse(records[idx[i]].design, catalog, normalizer);
  });
  if (labels) {
    labels->clear();
    for (std::size_t i : idx) labels->push_back(records[i].label);
  }
  return out;
}

std::vector<std::size_t> indices_of(const std::vector<bool>& flags, bool want) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] == want) out.push_back(i);
  }
  return out;
}

void cmd_train(const Common& common, const TrainArgs& a) {
  Manifest m("train");
  Catalog catalog = load_catalog(common, m);
  m.input("dataset", a.data);
  auto records = read_dataset(a.data, true);
  std::vector<bool> is_train = split_assignment(records.size(), a.split.split_seed, a.split.train_fraction);
  check_splits(records, is_train);
  m.seed("split", a.split.split_seed);
  m.field("train_fraction", a.split.train_fraction);

  ModelConfig mc;
  if (!a.model_config.empty()) {
    mc = ModelConfig::from_json(read_json_file(a.model_config));
    m.input("model_config", a.model_config);
  }
  mc.input_dim = EmbeddingLayout::of(catalog).width();
  mc.validate();
  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.init_seed = a.seed;
  tc.shuffle_seed = a.shuffle_seed.value_or(a.seed);
  tc.validate();
  m.config("model", mc.to_json());
  m.config("train", tc.to_json());
  m.seed("init", tc.init_seed);
  m.seed("shuffle", tc.shuffle_seed);

  auto train_idx = indices_of(is_train, true);
  std::vector<TokenSequence> train_seqs;
  for (std::size_t i : train_idx) train_seqs.push_back(records[i].design);
  FloatNormalizer normalizer = FloatNormalizer::fit(train_seqs);
  std::vector<int> labels;
  auto inputs = encode_all(records, train_idx, catalog, normalizer, &labels);

  SurrogateModel model(mc, catalog.content_hash(), tc.init_seed);
  model.set_normalizer(normalizer);
  const double t0 = m.elapsed();
  TrainResult result = train(std::move(model), inputs, labels, tc, default_thread_count(), [&](int epoch,
                                                                                               const EpochStats& s) {
    if (epoch == 1 || epoch % 10 == 0 || epoch == tc.epochs) {
      std::fprintf(stderr, "epoch %d loss %.6f accuracy %.4f\n", epoch, s.loss, s.accuracy);
    }
  });
  m.phase("train", m.elapsed() - t0);

  const std::string history_out = a.history_out.empty() ? a.model_out + ".history.csv" : a.history_out;
  write_file_atomic(a.model_out, checkpoint_bytes(result.model));
  write_file_atomic(history_out, history_csv(result.history));
  m.output("checkpoint", a.model_out);
  m.output("history", history_out);
  m.field("train_records", train_idx.size());
  m.field("final_loss", result.history.back().loss);
  m.field("final_accuracy", result.history.back().accuracy);
  m.write(a.model_out);
  std::cout << "trained " << tc.epochs << " epochs on " << train_idx.size() << " records; final loss "
            << format_double(result.history.back().loss) << "\n";
}

// ---------------------------------------------------------------------------

SurrogateModel load_model(const std::string& path, const Catalog& catalog, bool allow_mismatch, Manifest& m) {
  m.input("model", path);
  std::string bytes = read_file(path);
  m.field("model_sha256", to_hex(sha256(bytes)));
  return load_checkpoint(bytes, &catalog.content_hash(), allow_mismatch);
}

struct EvalArgs {
  std::string model, data, pr_out, report_out;
  double threshold = 0.5;
  std::optional<double> min_recall;
  std::string split = "test";
  SplitArgs split_args;
  bool allow_mismatch = false;
};

void cmd_eval(const Common& common, const EvalArgs& a) {
  Manifest m("eval");
  Catalog catalog = load_catalog(common, m);
  SurrogateModel model = load_model(a.model, catalog, a.allow_mismatch, m);
  m.input("dataset", a.data);
  auto records = read_dataset(a.data, true);
  std::vector<std::size_t> idx;
  if (a.split == "all") {
    for (std::size_t i = 0; i < records.size(); ++i) idx.push_back(i);
  } else {
    auto is_train = split_assignment(records.size(), a.split_args.split_seed, a.split_args.train_fraction);
    idx = indices_of(is_train, a.split == "train");
    m.seed("split", a.split_args.split_seed);
    m.field("train_fraction", a.split_args.train_fraction);
  }
  m.field("split", a.split);
  std::vector<int> labels;
  auto inputs = encode_all(records, idx, catalog, model.normalizer(), &labels);
  EvalReport report = evaluate(model, inputs, labels, a.threshold, default_thread_count());

  json out{{"records", idx.size()},
           {"threshold", report.threshold},
           {"accuracy", report.accuracy},
           {"precision", report.precision},
           {"recall", report.recall},
           {"confusion",
            {{"tp", report.confusion.tp}, {"fp", report.confusion.fp}, {"tn", report.confusion.tn},
             {"fn", report.confusion.fn}}}};
  if (a.min_recall) {
    out["min_recall"] = *a.min_recall;
    out["calibrated_threshold"] = choose_threshold(report, *a.min_recall);
  }
  write_file_atomic(a.pr_out, pr_curve_csv(report));
  m.output("pr_curve", a.pr_out);
  if (!a.report_out.empty()) {
    write_file_atomic(a.report_out, out.dump(2) + "\n");
    m.output("report", a.report_out);
  }
  m.field("report", out);
  m.write(a.pr_out);
  std::cout << out.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

struct FilterArgs {
  std::string model, config, out, summary_out;
  std::size_t count = 0;
  double threshold = 0.15;
  std::uint64_t start = 1000000;
  std::optional<std::uint64_t> seed;
  bool allow_mismatch = false;
};

void cmd_filter(const Common& common, const FilterArgs& a) {
  Manifest m("filter");
  Catalog catalog = load_catalog(common, m);
  SurrogateModel model = load_model(a.model, catalog, a.allow_mismatch, m);
  GeneratorConfig gen = load_generator(a.config, m);
  if (a.seed) gen.seed = *a.seed;
  gen.validate();
  m.config("generator", gen.to_json());
  m.seed("generator", gen.seed);
  m.field("start_index", a.start);
  m.field("count", a.count);
  m.field("threshold", a.threshold);
  if (a.allow_mismatch) {
    // filter_designs checks the hash itself; adopt the live catalog once the
    // caller has explicitly accepted the mismatch.
    FloatNormalizer normalizer = model.normalizer();
    model = SurrogateModel(model.config(), catalog.content_hash(), model.parameters());
    model.set_normalizer(normalizer);
  }
  FilterReport report = filter_designs(model, gen, a.start, a.count, a.threshold, catalog, default_thread_count());
  std::string body;
  for (const KeptDesign& k : report.kept) body += kept_line(k) + "\n";
  write_file_atomic(a.out, body);
  const std::string summary_out = a.summary_out.empty() ? a.out + ".summary.txt" : a.summary_out;
  write_file_atomic(summary_out, filter_summary(report));
  m.output("kept", a.out);
  m.output("summary", summary_out);
  m.field("n_kept", report.n_kept);
  m.write(a.out);
  std::cout << filter_summary(report);
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string kept, out, constants;
  double verify_fraction = 1.0;
  std::optional<std::size_t> verify_count;
  std::uint64_t seed = 0;
  std::optional<std::size_t> proposed;
  double minutes_per_eval = 4.0;
};

void cmd_report(const Common& common, const ReportArgs& a) {
  Manifest m("report");
  Catalog catalog = load_catalog(common, m);
  PhysicsConstants constants = load_constants(a.constants, m);
  m.input("kept", a.kept);
  std::vector<KeptDesign> kept;
  {
    std::ifstream in(a.kept);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + a.kept + "'");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty()) kept.push_back(parse_kept_line(line, n));
    }
  }
  if (!(a.verify_fraction >= 0.0 && a.verify_fraction <= 1.0)) {
    throw Error(ErrorCode::Config, "--verify-fraction must lie in [0, 1]");
  }
  const std::size_t sample = a.verify_count.value_or(static_cast<std::size_t>(
      std::llround(a.verify_fraction * static_cast<double>(kept.size()))));
  m.seed("verify", a.seed);
  m.field("verify_sample", sample);
  VerifyReport v = verify_kept(kept, catalog, constants, sample, a.seed, default_thread_count());

  std::ostringstream text;
  text << "kept designs: " << kept.size() << "\n";
  text << "verified: " << v.sample_size << ", hovering: " << v.n_hover << " ("
       << format_double(std::round(v.hover_fraction * 10000.0) / 100.0) << "%)\n";
  if (a.proposed) {
    auto [unfiltered, filtered] = estimate_compute_savings(*a.proposed, kept.size(), a.minutes_per_eval);
    text << "oracle time at " << format_double(a.minutes_per_eval) << " min/eval: " << format_double(unfiltered)
         << " days unfiltered vs " << format_double(filtered) << " days filtered\n";
    m.field("days_unfiltered", unfiltered);
    m.field("days_filtered", filtered);
  }
  const std::string prop_csv = a.out + ".propellers.csv";
  const std::string wing_csv = a.out + ".wings.csv";
  write_file_atomic(a.out, text.str());
  write_file_atomic(prop_csv, histogram_csv(v.propeller_histogram));
  write_file_atomic(wing_csv, histogram_csv(v.wing_histogram));
  m.output("report", a.out);
  m.output("propeller_histogram", prop_csv);
  m.output("wing_histogram", wing_csv);
  m.field("n_hover", v.n_hover);
  m.write(a.out);
  std::cout << text.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grammar-based UAV design generation, hover labelling and surrogate-filtered sampling"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Common common;
  app.add_option("--catalog", common.catalog_path, "Component catalog (line-delimited JSON)")
      ->capture_default_str();

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Sample designs from the procedural generator");
  g->add_option("--config", gen.config, "Generator config JSON");
  g->add_option("--seed", gen.seed, "Override the config seed");
  g->add_option("--count", gen.count, "Number of designs")->required();
  g->add_option("--start", gen.start, "First design index")->capture_default_str();
  g->add_option("--out", gen.out, "Output design file")->required();

  LabelArgs lab;
  auto* l = app.add_subcommand("label", "Label designs with the hover oracle");
  l->add_option("--in", lab.in, "Design file")->required();
  l->add_option("--out", lab.out, "Labelled dataset file")->required();
  l->add_option("--constants", lab.constants, "Physics constants JSON");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the surrogate");
  t->add_option("--data", tr.data, "Labelled dataset file")->required();
  t->add_option("--model-out", tr.model_out, "Checkpoint path")->required();
  t->add_option("--model-config", tr.model_config, "Model config JSON");
  t->add_option("--history-out", tr.history_out, "Per-epoch CSV (default <model-out>.history.csv)");
  t->add_option("--epochs", tr.epochs)->capture_default_str();
  t->add_option("--lr", tr.lr)->capture_default_str();
  t->add_option("--batch-size", tr.batch_size)->capture_default_str();
  t->add_option("--seed", tr.seed, "Parameter-init seed")->capture_default_str();
  t->add_option("--shuffle-seed", tr.shuffle_seed, "Minibatch shuffle seed (default: --seed)");
  t->add_option("--split-seed", tr.split.split_seed)->capture_default_str();
  t->add_option("--train-fraction", tr.split.train_fraction)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint and write the PR curve");
  e->add_option("--model", ev.model)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--pr-out", ev.pr_out, "PR curve CSV")->required();
  e->add_option("--report-out", ev.report_out, "Metrics JSON");
  e->add_option("--threshold", ev.threshold)->capture_default_str();
  e->add_option("--min-recall", ev.min_recall, "Also report the calibrated threshold");
  e->add_option("--split", ev.split, "Records to evaluate")
      ->check(CLI::IsMember({"test", "train", "all"}))
      ->capture_default_str();
  e->add_option("--split-seed", ev.split_args.split_seed)->capture_default_str();
  e->add_option("--train-fraction", ev.split_args.train_fraction)->capture_default_str();
  e->add_flag("--allow-catalog-mismatch", ev.allow_mismatch);

  FilterArgs fi;
  auto* f = app.add_subcommand("filter", "Rejection-sample fresh designs through the surrogate");
  f->add_option("--model", fi.model)->required();
  f->add_option("--config", fi.config, "Generator config JSON");
  f->add_option("--seed", fi.seed, "Override the config seed");
  f->add_option("--count", fi.count)->required();
  f->add_option("--threshold", fi.threshold)->capture_default_str();
  f->add_option("--start", fi.start, "First design index")->capture_default_str();
  f->add_option("--out", fi.out, "Kept designs (line-delimited JSON)")->required();
  f->add_option("--summary-out", fi.summary_out, "Summary text (default <out>.summary.txt)");
  f->add_flag("--allow-catalog-mismatch", fi.allow_mismatch);

  ReportArgs re;
  auto* r = app.add_subcommand("report", "Verify kept designs with the oracle and tabulate them");
  r->add_option("--kept", re.kept)->required();
  r->add_option("--out", re.out, "Report text; histograms go to <out>.propellers.csv / <out>.wings.csv")->required();
  r->add_option("--verify-fraction", re.verify_fraction)->capture_default_str();
  r->add_option("--verify-count", re.verify_count, "Exact sample size (overrides --verify-fraction)");
  r->add_option("--seed", re.seed, "Subsample seed")->capture_default_str();
  r->add_option("--constants", re.constants, "Physics constants JSON");
  r->add_option("--proposed", re.proposed, "Designs proposed upstream, for the compute estimate");
  r->add_option("--minutes-per-eval", re.minutes_per_eval)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) cmd_generate(common, gen);
    else if (*l) cmd_label(common, lab);
    else if (*t) cmd_train(common, tr);
    else if (*e) cmd_eval(common, ev);
    else if (*f) cmd_filter(common, fi);
    else if (*r) cmd_report(common, re);
  } catch (const Error& err) {
    std::cerr << "error [" << to_string(err.code()) << "]: " << err.what() << "\n";
    return exit_code_for(err.code());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kIo;
  }
  return kOk;
}
