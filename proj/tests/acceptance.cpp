// Acceptance runner: one PASS/FAIL/SKIP line per criterion.
//
//   acceptance [--jobs N] [criterion ...]     (default: all of 1-7)
//
// Exit 0 when every requested criterion passes or is skipped, 1 on any
// failure, 77 when everything requested was skipped (missing MNIST data).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "nodebench/checks.hpp"
#include "nodebench/config.hpp"
#include "nodebench/evaluation.hpp"
#include "nodebench/ops.hpp"
#include "nodebench/perturb.hpp"
#include "nodebench/rng.hpp"
#include "nodebench/training.hpp"

using namespace nodebench;

namespace {

enum class Verdict { kPass, kFail, kSkip };

struct Outcome {
  Verdict verdict = Verdict::kFail;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Runs suites and reports the first failing check, if any.
Outcome suites_pass(const std::vector<std::string>& suites, const CheckOptions& o, double budget_s,
                    const std::vector<std::string>& required = {}) {
  const auto t0 = Clock::now();
  std::vector<CheckResult> results;
  for (const auto& s : suites) {
    auto part = run_check_suite(s, o);
    results.insert(results.end(), part.begin(), part.end());
  }
  const double secs = seconds_since(t0);
  for (const auto& name : required) {
    if (std::none_of(results.begin(), results.end(), [&](const CheckResult& r) { return r.name == name; })) {
      return {Verdict::kFail, "missing check " + name};
    }
  }
  for (const auto& r : results) {
    if (!r.passed) return {Verdict::kFail, r.suite + "/" + r.name + " " + r.metric + "=" + std::to_string(r.value) + " " + r.detail};
  }
  if (secs >= budget_s) return {Verdict::kFail, fmt("took %.1fs", secs)};
  return {Verdict::kPass, std::to_string(results.size()) + " checks, " + fmt("%.1fs", secs)};
}

// 1 ---------------------------------------------------------------------------------

Outcome autodiff_criterion() {
  CheckOptions o;
  o.gradient_coordinates = 100;
  o.input_coordinates = 25;
  return suites_pass({"autodiff"}, o, 60.0);
}

// 2 ---------------------------------------------------------------------------------

Outcome ode_criterion() {
  CheckOptions o;
  o.shift_systems = 50;
  return suites_pass({"ode"}, o, 1e9, {"euler_growth", "time_shift_identity", "deviation_bound"});
}

// 3 ---------------------------------------------------------------------------------

Outcome property_criterion() {
  CheckOptions o;
  o.random_systems = 100;
  return suites_pass({"flow", "gronwall"}, o, 120.0, {"non_intersection_random", "bound_random", "step_halving"});
}

// 4 ---------------------------------------------------------------------------------

/// Class 0 iff w·x + b > 0 on 4-pixel inputs; linear in x, so sign steps are optimal.
LinearClassifier binary_oracle() {
  return LinearClassifier(Tensor({2, 4}, std::vector<double>{0.7, -1.2, 0.4, 0.9, -0.7, 1.2, -0.4, -0.9}),
                          Tensor({2}, std::vector<double>{-0.4, 0.4}));
}

Outcome attack_criterion() {
  BlobOptions bo;
  bo.n_per_class = 2;
  const Dataset blobs = synthetic_blobs(bo);
  const Tensor x = blobs.normalized_images();
  const Normalization& norm = blobs.normalization;
  const double range = norm.upper() - norm.lower();
  std::size_t identity_cases = 0, ball_cases = 0;
  for (RmKind k : {RmKind::kResidual, RmKind::kWeightTiedResidual, RmKind::kNode, RmKind::kTisode}) {
    ModelConfig cfg = model_config_for("synthetic");
    cfg.weight_tied_scale = 0.1;
    const Model m(k, cfg, 17);
    for (double eps : {0.01, 0.1, 0.3}) {
      const Tensor f = fgsm(m, x, blobs.labels, eps, norm);
      if (!bitwise_equal(pgd(m, x, blobs.labels, eps, 1, eps, false, 0, norm), f)) {
        return {Verdict::kFail, "pgd(1 step) != fgsm for " + to_string(k) + fmt(" eps %.2f", eps)};
      }
      ++identity_cases;
      for (const Tensor& adv : {f, pgd(m, x, blobs.labels, eps, 7, eps / 4, true, 3, norm),
                                pgd(m, x, blobs.labels, eps, 7, eps / 4, false, 0, norm)}) {
        const bool in_ball = max_abs_diff(adv, x) <= eps * range * (1.0 + 1e-12);
        const bool in_range = std::all_of(adv.data().begin(), adv.data().end(),
                                          [&](double v) { return v >= norm.lower() && v <= norm.upper(); });
        if (!in_ball || !in_range) return {Verdict::kFail, "attack left the budget or range for " + to_string(k)};
        ++ball_cases;
      }
    }
  }

  // Monotonicity on the linear oracle.
  Dataset d;
  Rng rng(derive_seed(4, "oracle-data"));
  std::uniform_real_distribution<double> px(0.0, 255.0);
  const LinearClassifier oracle = binary_oracle();
  std::vector<double> values(400 * 4);
  for (auto& v : values) v = px(rng);
  d.images = Tensor({400, 4}, values);
  d.num_classes = 2;
  d.normalization = Normalization{0.0, 255.0};
  d.labels = predict(oracle, d.normalized_images());
  for (std::size_t i = 0; i < 400; i += 5) d.labels[i] = 1 - d.labels[i];  // some clean errors to filter
  for (const char* kind : {"fgsm", "pgd"}) {
    double previous = 2.0;
    for (int step = 0; step <= 20; ++step) {
      const double eps = 0.025 * step;
      PerturbationSpec spec = std::string(kind) == "fgsm" ? PerturbationSpec::fgsm(eps)
                                                          : PerturbationSpec::pgd(eps, 10, eps / 5.0, false);
      const double acc = robust_accuracy(oracle, d, spec, 0).accuracy;
      if (acc > previous) return {Verdict::kFail, std::string(kind) + fmt(" accuracy rose at eps %.3f", eps)};
      previous = acc;
    }
  }
  return {Verdict::kPass, std::to_string(identity_cases) + " bitwise identities, " + std::to_string(ball_cases) +
                              " budget checks, monotone over 21 budgets"};
}

// 5 ---------------------------------------------------------------------------------

DataSpec regularizer_data() {
  DataSpec spec;
  spec.dataset = "synthetic";
  spec.n_per_class = 300;
  spec.separation = 8.0;
  spec.seed = 1;
  return spec;
}

double accuracy_on(const Classifier& m, const Dataset& d) {
  const auto pred = predict(m, d.normalized_images());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == d.labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

Outcome regularizer_criterion() {
  const auto t0 = Clock::now();
  const DataSpec spec = regularizer_data();
  const Dataset train_set = load_split(spec, "train"), test_set = load_split(spec, "test");
  const Tensor test_inputs = test_set.normalized_images();
  std::ostringstream detail;
  bool ok = true;
  for (std::uint64_t seed : {0, 1, 2}) {
    double gap[2], acc[2];
    for (int with = 0; with < 2; ++with) {
      Model m(RmKind::kTisode, model_config_for("synthetic"), derive_seed(seed, "init"));
      TrainConfig cfg;
      cfg.seed = seed;
      cfg.lambda_ss = with ? 0.1 : 0.0;
      train(m, train_set, cfg);
      const auto gaps = steady_state_gap(m, test_inputs);
      gap[with] = 0.0;
      for (double g : gaps) gap[with] += g;
      gap[with] /= static_cast<double>(gaps.size());
      acc[with] = accuracy_on(m, test_set);
    }
    const double reduction = 1.0 - gap[1] / gap[0];
    const double loss = acc[0] - acc[1];
    ok = ok && reduction >= 0.5 && loss <= 0.05;
    detail << "seed " << seed << ": gap " << fmt("%.3g", gap[0]) << " -> " << fmt("%.3g", gap[1])
           << ", acc " << fmt("%.3f", acc[0]) << " -> " << fmt("%.3f", acc[1]) << "; ";
  }
  const double secs = seconds_since(t0);
  detail << fmt("%.0fs", secs);
  return {ok && secs < 600.0 ? Verdict::kPass : Verdict::kFail, detail.str()};
}

// 6 ---------------------------------------------------------------------------------

std::size_t g_jobs = 1;

Outcome mnist_criterion() {
  const char* root = std::getenv(kDataRootEnv);
  if (!root || !*root) return {Verdict::kSkip, std::string("MNIST not available; set ") + kDataRootEnv};
  const auto t0 = Clock::now();
  DataSpec spec;
  spec.dataset = "mnist";
  spec.root = root;
  spec.train_size = 10000;
  spec.test_size = 2000;
  const Dataset train_set = load_split(spec, "train"), test_set = load_split(spec, "test");

  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.regime = Regime::kGaussian;
  cfg.sigmas = {50.0, 75.0, 100.0};
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const auto fgsm_spec = PerturbationSpec::fgsm(0.3), pgd_spec = PerturbationSpec::pgd(0.2);

  std::vector<EvalRow> rows;
  for (RmKind k : {RmKind::kResidual, RmKind::kNode, RmKind::kTisode}) {
    ModelFactory factory = [k](std::uint64_t seed) {
      return std::make_unique<Model>(k, model_config_for("mnist"), derive_seed(seed, "init"));
    };
    auto runs = multi_seed_train(factory, train_set, cfg, seeds, g_jobs);
    for (auto& run : runs) {
      if (!run.error.empty()) return {Verdict::kFail, family_name(k) + ": " + run.error};
      for (const auto& s : {fgsm_spec, pgd_spec}) {
        EvalRow r = robust_accuracy(*run.model, test_set, s, derive_seed(run.seed, "eval"));
        r.model_id = family_name(k);
        r.seed = run.seed;
        rows.push_back(r);
      }
    }
  }
  const RobustnessTable t = summarize(rows);
  const double cnn_f = t.cell("cnn", fgsm_spec.label()).mean, node_f = t.cell("node", fgsm_spec.label()).mean;
  const double tis_f = t.cell("tisode", fgsm_spec.label()).mean;
  const double cnn_p = t.cell("cnn", pgd_spec.label()).mean, node_p = t.cell("node", pgd_spec.label()).mean;
  const bool a = node_f - cnn_f >= 0.05, b = node_p - cnn_p >= 0.10, c = tis_f >= node_f - 0.01;
  std::ostringstream detail;
  detail << "FGSM-0.3 cnn " << fmt("%.3f", cnn_f) << " node " << fmt("%.3f", node_f) << " tisode "
         << fmt("%.3f", tis_f) << "; PGD-0.2 cnn " << fmt("%.3f", cnn_p) << " node " << fmt("%.3f", node_p)
         << "; (a) " << (a ? "ok" : "no") << " (b) " << (b ? "ok" : "no") << " (c) " << (c ? "ok" : "no")
         << fmt("; %.0fs", seconds_since(t0));
  return {a && b && c ? Verdict::kPass : Verdict::kFail, detail.str()};
}

// 7 ---------------------------------------------------------------------------------

/// Reads the accuracy column of rows_csv output for one model and column.
std::vector<double> csv_accuracies(const std::string& csv, const std::string& model, const std::string& kind) {
  std::vector<double> out;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() == 9 && f[0] == model && f[3] == kind) out.push_back(std::stod(f[8]));
  }
  return out;
}

Outcome protocol_criterion() {
  DataSpec spec;
  spec.dataset = "synthetic";
  spec.n_per_class = 40;
  spec.separation = 8.0;
  const Dataset train_set = load_split(spec, "train"), test_set = load_split(spec, "test");
  TrainConfig cfg;
  cfg.epochs = 4;
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const std::vector<PerturbationSpec> zero{PerturbationSpec::gaussian(0.0), PerturbationSpec::fgsm(0.0),
                                           PerturbationSpec::pgd(0.0, 10, 0.01, true)};
  std::vector<EvalRow> rows;
  std::size_t zero_cells = 0;
  for (RmKind k : {RmKind::kResidual, RmKind::kWeightTiedResidual, RmKind::kNode, RmKind::kTisode}) {
    ModelConfig mc = model_config_for("synthetic");
    mc.weight_tied_scale = 0.1;
    ModelFactory factory = [k, mc](std::uint64_t seed) {
      return std::make_unique<Model>(k, mc, derive_seed(seed, "init"));
    };
    auto runs = multi_seed_train(factory, train_set, cfg, seeds, g_jobs);
    for (auto& run : runs) {
      if (!run.error.empty()) return {Verdict::kFail, run.error};
      for (const auto& z : zero) {
        const EvalRow r = robust_accuracy(*run.model, test_set, z, run.seed);
        if (r.degenerate || r.accuracy != 1.0) {
          return {Verdict::kFail, family_name(k) + " " + z.to_string() + fmt(" accuracy %.17g", r.accuracy)};
        }
        ++zero_cells;
      }
      EvalRow r = robust_accuracy(*run.model, test_set, PerturbationSpec::fgsm(0.1), run.seed);
      r.model_id = family_name(k);
      r.seed = run.seed;
      rows.push_back(r);
    }
  }
  // Hand arithmetic from the per-seed CSV against the aggregated table.
  const std::string csv = rows_csv(rows);
  const RobustnessTable table = summarize(rows);
  for (const auto& model : table.models) {
    const auto acc = csv_accuracies(csv, model, "fgsm");
    if (acc.size() != 3) return {Verdict::kFail, "expected 3 per-seed rows for " + model};
    const double mean = (acc[0] + acc[1] + acc[2]) / 3.0;
    const double var = ((acc[0] - mean) * (acc[0] - mean) + (acc[1] - mean) * (acc[1] - mean) +
                         (acc[2] - mean) * (acc[2] - mean)) / 3.0;
    const TableCell& cell = table.cell(model, "FGSM-0.1");
    if (std::abs(cell.mean - mean) > 1e-12 || std::abs(cell.std - std::sqrt(var)) > 1e-12) {
      return {Verdict::kFail, "table disagrees with hand arithmetic for " + model};
    }
    char expect[64];
    std::snprintf(expect, sizeof expect, "%.1f ± %.1f", 100.0 * mean, 100.0 * std::sqrt(var));
    if (table.text().find(expect) == std::string::npos) {
      return {Verdict::kFail, std::string("text table lacks '") + expect + "'"};
    }
  }
  return {Verdict::kPass, std::to_string(zero_cells) + " zero-magnitude cells at 1.0; " +
                              std::to_string(table.models.size()) + " table rows match the per-seed CSV"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"autodiff gradients on the MNIST architecture", autodiff_criterion},
      {"ODE core exactness", ode_criterion},
      {"non-intersection and Gronwall suite", property_criterion},
      {"attack identities", attack_criterion},
      {"steady-state regularizer effect", regularizer_criterion},
      {"directional MNIST reproduction", mnist_criterion},
      {"evaluation protocol", protocol_criterion},
  };
  std::vector<std::size_t> wanted;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--jobs" && i + 1 < argc) {
      g_jobs = std::max(1, std::atoi(argv[++i]));
      continue;
    }
    const int n = std::atoi(arg.c_str());
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "unknown criterion '%s'\n", arg.c_str());
      return 2;
    }
    wanted.push_back(static_cast<std::size_t>(n));
  }
  if (wanted.empty()) {
    for (std::size_t n = 1; n <= criteria.size(); ++n) wanted.push_back(n);
  }

  std::size_t failed = 0, skipped = 0;
  for (std::size_t n : wanted) {
    Outcome o;
    try {
      o = criteria[n - 1].second();
    } catch (const std::exception& e) {
      o = {Verdict::kFail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::kPass ? "PASS" : o.verdict == Verdict::kSkip ? "SKIP" : "FAIL";
    std::printf("criterion %zu %s: %s: %s\n", n, tag, criteria[n - 1].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.verdict == Verdict::kFail;
    skipped += o.verdict == Verdict::kSkip;
  }
  if (failed) return 1;
  return skipped == wanted.size() ? 77 : 0;
}
