// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "uavdesign/catalog.hpp"
#include "uavdesign/codec.hpp"
#include "uavdesign/error.hpp"
#include "uavdesign/generator.hpp"
#include "uavdesign/io.hpp"
#include "uavdesign/parallel.hpp"
#include "uavdesign/physics.hpp"
#include "uavdesign/pipeline.hpp"
#include "uavdesign/rng.hpp"
#include "uavdesign/surrogate.hpp"

using namespace uav;

namespace {

// Pinned limits.
constexpr double kRoundTripSeconds = 60.0;
constexpr double kGradRelErr = 1e-4;
constexpr double kGradSeconds = 300.0;
constexpr double kOverfitAccuracy = 0.98;
constexpr int kOverfitEpochs = 600;
constexpr double kMinRecall = 0.85;
constexpr double kMinLift = 2.0;
constexpr double kDeskSeconds = 3600.0;
constexpr double kSavingsSlackDays = 0.1;
constexpr double kGeneratorSeconds = 300.0;
constexpr double kHoverRelTol = 0.005;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

const Catalog& catalog() {
  static const Catalog c = Catalog::load_file(std::string(UAV_DATA_DIR) + "/catalog.jsonl");
  return c;
}

ModelConfig desk_model() {
  ModelConfig c = ModelConfig::from_json(nlohmann::json::parse(read_file(std::string(UAV_DATA_DIR) + "/model_desk.json")));
  c.input_dim = EmbeddingLayout::of(catalog()).width();
  return c;
}

TrainConfig desk_training(int epochs) {
  TrainConfig t;
  t.learning_rate = 0.01;
  t.batch_size = 8;
  t.epochs = epochs;
  return t;
}

std::vector<SparseSequence> encode_all(const std::vector<TokenSequence>& seqs, const FloatNormalizer& norm) {
  std::vector<SparseSequence> out(seqs.size());
  parallel_for(seqs.size(), [&](std::size_t i) { out[i] = encode_sparse(seqs[i], catalog(), norm); });
  return out;
}

// ---------------------------------------------------------------------------

Outcome codec_round_trip() {
  auto t0 = Clock::now();
  GeneratorConfig gen;
  int failures = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    DesignNode t = sample_design(gen, i, catalog());
    try {
      if (!(parse(flatten(t), catalog()) == t)) ++failures;
    } catch (const Error&) {
      ++failures;
    }
  }
  double s = seconds_since(t0);
  return {failures == 0 && s <= kRoundTripSeconds,
          "10000 designs, " + std::to_string(failures) + " failures, " + fmt(s, 3) + " s"};
}

Outcome golden_sequence() {
  const std::string golden =
      "[{'node_type': 'ConnectedHub4_Sym'}, {'node_type': 'PropArm'}, {'armLength': 210.88760375976562}, "
      "{'motorType': 't_motor_MN2212KV780'}, {'propType': 'apc_propellers_12x5'}, {'escType': 't_motor_T_80A'}, "
      "{'offset': -3.2862548828125}, {'offset': 4.2498626708984375}, {'angle': 0.0}, "
      "{'x1_offset': 4.219192504882812}, {'z1_offset': 3.637290954589844}, "
      "{'batteryType': 'TurnigyGraphene1400mAh3S75C'}]";
  TokenSequence seq = flatten(reference_quadcopter());
  std::string got = to_literal(seq);
  return {got == golden && seq.size() == 12, std::to_string(seq.size()) + " tokens, byte-exact " + (got == golden ? "yes" : "no")};
}

Outcome embedding_width() {
  const Catalog& cat = catalog();
  EmbeddingLayout L = EmbeddingLayout::of(cat);
  bool ok = L.key_classes == 18 && L.value_classes == 671 && L.attribute_slots == 51 && L.width() == 741;
  GeneratorConfig gen;
  Rng rng(3);
  int bad = 0, checked = 0;
  for (std::uint64_t i = 0; checked < 10000; ++i) {
    TokenSequence s = flatten(sample_design(gen, i, cat));
    const Token& t = s[rng.below(s.size())];
    RawTokenVector v = embed_token(t, cat);
    ++checked;
    if (v.size() != 741) {
      ++bad;
      continue;
    }
    bool good = v.segment(L.key_offset(), L.key_classes).sum() == 1.0 && v[static_cast<int>(t.key)] == 1.0;
    good = good && v.segment(L.value_offset(), L.value_classes).sum() == 1.0;
    const auto* sym = std::get_if<std::string>(&t.value);
    int value_idx = *cat.value_index(sym ? *sym : std::string(Catalog::kNumericValue));
    good = good && v[L.value_offset() + value_idx] == 1.0;
    for (int a = 0; a < L.attribute_slots; ++a) {
      double want = sym && referenced_kind(t.key) ? cat.attribute_vector(*sym)[static_cast<std::size_t>(a)] : 0.0;
      good = good && v[L.attribute_offset() + a] == want;
    }
    good = good && v[L.float_offset()] == (sym ? 0.0 : std::get<double>(t.value));
    if (!good) ++bad;
  }
  ok = ok && bad == 0;
  return {ok, "width " + std::to_string(L.width()) + " = " + std::to_string(L.key_classes) + " + " +
                  std::to_string(L.value_classes) + " + " + std::to_string(L.attribute_slots) + " + 1; " +
                  std::to_string(bad) + " of " + std::to_string(checked) + " tokens violate segment invariants"};
}

Outcome gradient_check() {
  auto t0 = Clock::now();
  const Catalog& cat = catalog();
  GeneratorConfig gen;
  std::vector<TokenSequence> seqs;
  for (std::uint64_t i = 0; seqs.size() < 4; ++i) {
    TokenSequence seq = flatten(sample_design(gen, i, cat));
    if (seq.size() < 8) continue;
    seq.resize(8);
    seqs.push_back(seq);
  }
  auto xs = encode_all(seqs, FloatNormalizer::fit(seqs));
  std::vector<int> ys = {1, 0, 0, 1};
  double worst = 0.0;
  std::size_t n_params = 0;
  for (NormPlacement norm : {NormPlacement::Post, NormPlacement::Pre}) {
    ModelConfig c;
    c.input_dim = EmbeddingLayout::of(cat).width();
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 32;
    c.norm = norm;
    SurrogateModel m(c, cat.content_hash(), 11);
    LossAndGradients lg = loss_and_gradients(m, xs, ys);
    std::vector<double>& p = m.parameters();
    const double eps = 1e-5;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double orig = p[j];
      p[j] = orig + eps;
      const double up = loss_and_gradients(m, xs, ys).loss;
      p[j] = orig - eps;
      const double down = loss_and_gradients(m, xs, ys).loss;
      p[j] = orig;
      const double fd = (up - down) / (2 * eps), an = lg.gradients[j];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
    n_params += p.size();
  }
  double s = seconds_since(t0);
  return {worst < kGradRelErr && s <= kGradSeconds, std::to_string(n_params) +
                                                       " parameters over post- and pre-norm models, max rel err " +
                                                       fmt(worst, 3) + ", " + fmt(s, 3) + " s"};
}

Outcome overfit_sanity() {
  const Catalog& cat = catalog();
  GeneratorConfig gen;
  std::vector<TokenSequence> seqs;
  std::vector<int> ys;
  int pos = 0, neg = 0;
  for (std::uint64_t i = 0; pos < 32 || neg < 32; ++i) {
    DesignNode t = sample_design(gen, i, cat);
    int y = label_design(t, cat).first;
    if ((y && pos >= 32) || (!y && neg >= 32)) continue;
    (y ? pos : neg) += 1;
    seqs.push_back(flatten(t));
    ys.push_back(y);
  }
  FloatNormalizer norm = FloatNormalizer::fit(seqs);
  auto xs = encode_all(seqs, norm);
  SurrogateModel init(desk_model(), cat.content_hash(), 1);
  init.set_normalizer(norm);
  TrainConfig tc = desk_training(kOverfitEpochs);
  tc.batch_size = 1;  // per-example SGD
  TrainResult r = train(init, xs, ys, tc);
  Eigen::VectorXd z = forward_sparse(r.model, xs);
  int correct = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) correct += (z(static_cast<Eigen::Index>(i)) >= 0.0) == (ys[i] == 1);
  const double acc = correct / 64.0;
  int rising_windows = 0;
  for (std::size_t e = 100; e + 50 < r.history.size(); ++e) {
    if (r.history[e + 50].loss > r.history[e].loss) ++rising_windows;
  }
  return {acc >= kOverfitAccuracy && rising_windows == 0,
          "64 designs, " + std::to_string(kOverfitEpochs) + " epochs of per-example SGD at lr 0.01: train accuracy " + fmt(acc) +
              ", final loss " + fmt(r.history.back().loss, 3) + ", " + std::to_string(rising_windows) +
              " rising 50-epoch windows after epoch 100"};
}

struct DeskRun {
  double seconds = 0.0;
  std::vector<double> test_probs;
  std::vector<int> test_labels;
  std::optional<std::string> error;
  double threshold = 0.0, val_recall = 0.0, val_precision = 0.0;
  std::size_t proposed = 0, kept = 0, verified = 0, verified_hover = 0;
  double base_rate = 0.0, kept_rate = 0.0;
};

DeskRun desk_run() {
  DeskRun d;
  auto t0 = Clock::now();
  const Catalog& cat = catalog();
  GeneratorConfig gen;
  try {
    LabeledDataset ds = build_dataset(gen, 5000, cat, {}, 0, default_thread_count());
    std::vector<TokenSequence> train_seqs, test_seqs;
    std::vector<int> train_labels;
    for (std::size_t i : ds.train_indices()) {
      train_seqs.push_back(ds.records[i].design);
      train_labels.push_back(ds.records[i].label);
    }
    for (std::size_t i : ds.test_indices()) {
      test_seqs.push_back(ds.records[i].design);
      d.test_labels.push_back(ds.records[i].label);
    }
    FloatNormalizer norm = FloatNormalizer::fit(train_seqs);
    SurrogateModel init(desk_model(), cat.content_hash(), 0);
    init.set_normalizer(norm);
    TrainResult r = train(init, encode_all(train_seqs, norm), train_labels, desk_training(30), default_thread_count());

    auto test_inputs = encode_all(test_seqs, norm);
    EvalReport report = evaluate(r.model, test_inputs, d.test_labels, 0.5, default_thread_count());
    Eigen::VectorXd z = forward_sparse(r.model, test_inputs, default_thread_count());
    for (Eigen::Index i = 0; i < z.size(); ++i) d.test_probs.push_back(sigmoid(z(i)));
    d.threshold = choose_threshold(report, kMinRecall);
    Confusion at = confusion_at(d.test_probs, d.test_labels, d.threshold);
    d.val_recall = recall_of(at);
    d.val_precision = precision_of(at);

    // Fresh designs come from indices the training set never touched.
    const std::uint64_t start = 1'000'000;
    FilterReport f = filter_designs(r.model, gen, start, 20000, d.threshold, cat, default_thread_count());
    d.proposed = f.n_proposed;
    d.kept = f.n_kept;
    d.kept_rate = static_cast<double>(f.n_kept) / static_cast<double>(f.n_proposed);
    if (f.n_kept < 2000) {
      d.error = "only " + std::to_string(f.n_kept) + " designs kept, fewer than the 2000 to verify";
    } else {
      VerifyReport v = verify_kept(f.kept, cat, {}, 2000, 0, default_thread_count());
      d.verified = v.sample_size;
      d.verified_hover = v.n_hover;
    }
    std::vector<int> fresh(20000, 0);
    parallel_for(fresh.size(), [&](std::size_t i) { fresh[i] = label_design(sample_design(gen, start + i, cat), cat).first; });
    long hover = 0;
    for (int y : fresh) hover += y;
    d.base_rate = static_cast<double>(hover) / 20000.0;
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  d.seconds = seconds_since(t0);
  return d;
}

Outcome pipeline_lift(const DeskRun& d) {
  if (d.error) return {false, *d.error + " (" + fmt(d.seconds, 3) + " s)"};
  const double rate = static_cast<double>(d.verified_hover) / static_cast<double>(d.verified);
  const double lift = rate / d.base_rate;
  return {lift >= kMinLift && d.val_recall >= kMinRecall && d.seconds <= kDeskSeconds,
          "threshold " + fmt(d.threshold) + " (test recall " + fmt(d.val_recall, 3) + ", precision " +
              fmt(d.val_precision, 3) + "); kept " + std::to_string(d.kept) + "/" + std::to_string(d.proposed) +
              "; verified hover " + std::to_string(d.verified_hover) + "/" + std::to_string(d.verified) + " = " +
              fmt(rate, 3) + " vs base " + fmt(d.base_rate, 3) + ", lift " + fmt(lift, 3) + "; " +
              fmt(d.seconds, 4) + " s"};
}

Outcome compute_savings() {
  auto [all, kept] = estimate_compute_savings(100000, 21800, 4.0);
  bool ok = std::abs(all - 277.8) <= kSavingsSlackDays + 1e-9 && std::abs(kept - 60.6) <= kSavingsSlackDays + 1e-9 &&
            std::abs(all - 277.7) <= kSavingsSlackDays + 1e-9;
  return {ok, fmt(all) + " days unfiltered, " + fmt(kept) + " days filtered"};
}

Outcome generator_throughput() {
  auto t0 = Clock::now();
  const Catalog& cat = catalog();
  GeneratorConfig gen;
  const std::size_t n = 100000;
  std::vector<int> invalid(n, 0);
  std::vector<std::size_t> bytes(n, 0);
  parallel_for(n, [&](std::size_t i) {
    DesignNode t = sample_design(gen, i, cat);
    invalid[i] = validate_design(t, cat).valid ? 0 : 1;
    bytes[i] = to_json_line(flatten(t)).size();
  });
  long bad = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bad += invalid[i];
    total += bytes[i];
  }
  double s = seconds_since(t0);
  return {bad == 0 && s <= kGeneratorSeconds, "100000 designs (" + std::to_string(total / 1024) + " KiB serialized), " +
                                                  std::to_string(bad) + " invalid, " + fmt(s, 3) + " s"};
}

Outcome metrics_oracle(const DeskRun& d) {
  if (d.error || d.test_labels.size() != 1000) return {false, "no 1000-record test split available"};
  EvalReport r = evaluate_scores(d.test_probs, d.test_labels, 0.5);
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const double t = i / 100.0;
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t k = 0; k < d.test_labels.size(); ++k) {
      const bool predicted = d.test_probs[k] >= t;
      const bool positive = d.test_labels[k] == 1;
      tp += predicted && positive;
      fp += predicted && !positive;
      tn += !predicted && !positive;
      fn += !predicted && positive;
    }
    const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 1.0;
    const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0;
    const double accuracy = static_cast<double>(tp + tn) / static_cast<double>(tp + fp + tn + fn);
    const PrPoint& pt = r.pr_curve[static_cast<std::size_t>(i)];
    Confusion c = confusion_at(d.test_probs, d.test_labels, t);
    if (pt.threshold != t || pt.precision != precision || pt.recall != recall || accuracy_of(c) != accuracy ||
        !(c == Confusion{tp, fp, tn, fn})) {
      ++mismatches;
    }
  }
  return {mismatches == 0 && r.pr_curve.size() == 100,
          "1000 records, 100 thresholds, " + std::to_string(mismatches) + " mismatches"};
}

struct PipelineArtifacts {
  std::string dataset, checkpoint, kept, summary, verification;
};

PipelineArtifacts small_pipeline(int threads) {
  const Catalog& cat = catalog();
  GeneratorConfig gen;
  gen.seed = 7;
  PipelineArtifacts a;
  LabeledDataset ds = build_dataset(gen, 600, cat, {}, 3, threads);
  std::vector<TokenSequence> train_seqs;
  std::vector<int> labels;
  for (const LabeledRecord& r : ds.records) a.dataset += dataset_line(r) + "\n";
  for (std::size_t i : ds.train_indices()) {
    train_seqs.push_back(ds.records[i].design);
    labels.push_back(ds.records[i].label);
  }
  FloatNormalizer norm = FloatNormalizer::fit(train_seqs);
  ModelConfig mc = desk_model();
  mc.d_model = 16;
  mc.d_ff = 32;
  SurrogateModel init(mc, cat.content_hash(), 5);
  init.set_normalizer(norm);
  TrainConfig tc = desk_training(3);
  tc.shuffle_seed = 9;
  std::vector<SparseSequence> xs(train_seqs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = encode_sparse(train_seqs[i], cat, norm);
  TrainResult r = train(init, xs, labels, tc, threads);
  a.checkpoint = checkpoint_bytes(r.model);
  FilterReport f = filter_designs(r.model, gen, 50000, 3000, 0.1, cat, threads);
  for (const KeptDesign& k : f.kept) a.kept += kept_line(k) + "\n";
  f.verification = verify_kept(f.kept, cat, {}, f.kept.size() / 2, 1, threads);
  a.summary = filter_summary(f);
  a.verification = histogram_csv(f.verification->propeller_histogram) + histogram_csv(f.verification->wing_histogram);
  return a;
}

Outcome determinism() {
  PipelineArtifacts a = small_pipeline(1);
  PipelineArtifacts b = small_pipeline(2);
  PipelineArtifacts c = small_pipeline(1);
  auto same = [&](auto member) { return a.*member == b.*member && a.*member == c.*member; };
  std::vector<std::string> differing;
  if (!same(&PipelineArtifacts::dataset)) differing.push_back("dataset");
  if (!same(&PipelineArtifacts::checkpoint)) differing.push_back("checkpoint");
  if (!same(&PipelineArtifacts::kept)) differing.push_back("kept designs");
  if (!same(&PipelineArtifacts::summary)) differing.push_back("filter summary");
  if (!same(&PipelineArtifacts::verification)) differing.push_back("verification");
  std::string detail = "three runs (1, 2, 1 threads): dataset " + std::to_string(a.dataset.size()) +
                       " B, checkpoint " + std::to_string(a.checkpoint.size()) + " B (sha256 " +
                       to_hex(sha256(a.checkpoint)).substr(0, 12) + "), kept " + std::to_string(a.kept.size()) + " B";
  for (const auto& name : differing) detail += "; " + name + " differs";
  return {differing.empty(), detail};
}

Outcome physics_golden() {
  HoverProblem p;
  p.mass_kg = 1.2;
  RotorSpec rotor;
  rotor.thrust_coeff = 0.10;
  rotor.power_coeff = 0.05;
  rotor.diameter_m = 0.254;
  rotor.kv_rpm_per_volt = 1000.0;
  rotor.motor_max_current_A = 30.0;
  rotor.esc_max_current_A = 30.0;
  p.rotors.assign(4, rotor);
  p.battery_capacity_Ah = 2.2;
  p.battery_voltage_V = 11.1;
  p.battery_max_discharge_C = 30.0;
  HoverResult r = solve_hover(p);

  // Independent recomputation.
  const double rho = 1.225, g = 9.80665;
  const double n = std::sqrt(1.2 * g / 4.0 / (0.10 * rho * std::pow(0.254, 4)));
  const double watts = 4.0 * 0.05 * rho * n * n * n * std::pow(0.254, 5) / 0.75;
  const double hover = 2.2 * 0.8 * 11.1 * 3600.0 / watts;
  bool ok = r.can_hover && std::abs(r.rotor_speed_rev_s / n - 1.0) <= kHoverRelTol &&
            std::abs(r.hover_time_s / hover - 1.0) <= kHoverRelTol && std::abs(n / 75.97 - 1.0) <= kHoverRelTol &&
            std::abs(hover / 464.5 - 1.0) <= kHoverRelTol;

  Rng rng(2024);
  int mass_pairs = 0, capacity_pairs = 0, violations = 0;
  while (mass_pairs < 1000 || capacity_pairs < 1000) {
    HoverProblem q;
    q.mass_kg = rng.uniform(0.3, 3.0);
    RotorSpec rs;
    rs.thrust_coeff = rng.uniform(0.08, 0.14);
    rs.power_coeff = rng.uniform(0.03, 0.07);
    rs.diameter_m = rng.uniform(6.0, 16.0) * kMetresPerInch;
    rs.kv_rpm_per_volt = rng.uniform(500.0, 2500.0);
    rs.motor_max_current_A = rng.uniform(20.0, 60.0);
    rs.esc_max_current_A = rng.uniform(20.0, 80.0);
    q.rotors.assign(2 + rng.below(12), rs);
    q.battery_capacity_Ah = rng.uniform(1.0, 10.0);
    q.battery_voltage_V = 3.7 * static_cast<double>(2 + rng.below(5));
    q.battery_max_discharge_C = rng.uniform(20.0, 100.0);
    HoverResult base = solve_hover(q);
    if (!base.can_hover) continue;
    if (mass_pairs < 1000) {
      HoverProblem heavier = q;
      heavier.mass_kg *= rng.uniform(1.001, 1.5);
      if (!(solve_hover(heavier).hover_time_s < base.hover_time_s)) ++violations;
      ++mass_pairs;
    }
    if (capacity_pairs < 1000) {
      HoverProblem bigger = q;
      bigger.battery_capacity_Ah *= rng.uniform(1.001, 1.5);
      if (!(solve_hover(bigger).hover_time_s > base.hover_time_s)) ++violations;
      ++capacity_pairs;
    }
  }
  ok = ok && violations == 0;
  return {ok, "n_req " + fmt(r.rotor_speed_rev_s, 6) + " rev/s, hover " + fmt(r.hover_time_s, 6) + " s; " +
                  std::to_string(violations) + " monotonicity violations in 2000 pairs"};
}

}  // namespace

int main() {
  int failures = 0;
  DeskRun desk;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "codec round trip", codec_round_trip);
  report(2, "golden 12-token sequence", golden_sequence);
  report(3, "embedding width", embedding_width);
  report(4, "gradient check", gradient_check);
  report(5, "overfit sanity", overfit_sanity);
  report(6, "desk-scale filter lift", [&] {
    desk = desk_run();
    return pipeline_lift(desk);
  });
  report(7, "compute savings", compute_savings);
  report(8, "generator throughput", generator_throughput);
  report(9, "metrics oracle", [&] { return metrics_oracle(desk); });
  report(10, "determinism", determinism);
  report(11, "hover oracle golden values", physics_golden);
  return failures == 0 ? 0 : 1;
}
