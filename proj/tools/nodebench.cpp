// nodebench: train, evaluate, attack and property-check neural ODE classifiers.
//
// Exit codes: 0 success, 1 a property check or training run failed,
// 2 bad arguments, invalid config or missing/unreadable input.

#include <CLI11.hpp>
#include <fnmatch.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "nodebench/checks.hpp"
#include "nodebench/config.hpp"
#include "nodebench/container.hpp"
#include "nodebench/evaluation.hpp"
#include "nodebench/ops.hpp"
#include "nodebench/properties.hpp"
#include "nodebench/rng.hpp"
#include "nodebench/text.hpp"
#include "nodebench/training.hpp"

using namespace nodebench;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kBadInput = 2;

struct Common {
  std::string config;
  std::string out;
  std::size_t jobs = 0;  // 0: keep the config value
  std::int64_t seed = -1;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw InputError("cannot write '" + path.string() + "'");
}

/// Config file (or defaults) with command-line overrides applied.
ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw InputError("config file '" + c.config + "' not found");
    cfg = ExperimentConfig::load(c.config);
  }
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (c.jobs) cfg.jobs = c.jobs;
  if (c.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(c.seed)};
  const std::string root = resolved_data_root(cfg.data);
  if (!root.empty()) cfg.data.root = root;
  cfg.validate();
  return cfg;
}

std::string run_name(RmKind kind, std::uint64_t seed) { return family_name(kind) + "_seed" + std::to_string(seed); }

// -- train --------------------------------------------------------------------------

int cmd_train(const Common& common) {
  const ExperimentConfig cfg = resolve(common);
  const fs::path out = cfg.out_dir;
  write_text(out / "config.ini", cfg.serialize());
  fs::create_directories(out / "checkpoints");
  const Dataset train_set = load_split(cfg.data, "train");
  const Dataset test_set = load_split(cfg.data, "test");
  const ModelConfig model_cfg = cfg.model_config();
  std::cout << "train: " << train_set.size() << " items, test: " << test_set.size() << " items\n";

  std::ostringstream summary;
  summary << "model,regime,seed,status,final_ce,final_l_ss,train_acc,test_acc\n";
  bool failed = false;
  for (RmKind kind : cfg.families) {
    ModelFactory factory = [&](std::uint64_t seed) {
      return std::make_unique<Model>(kind, model_cfg, derive_seed(seed, "init"));
    };
    auto runs = multi_seed_train(factory, train_set, cfg.train, cfg.seeds, cfg.jobs);
    for (auto& run : runs) {
      const std::string name = run_name(kind, run.seed);
      summary << family_name(kind) << ',' << to_string(cfg.train.regime) << ',' << run.seed << ',';
      if (!run.error.empty()) {
        failed = true;
        std::cerr << name << ": " << run.error << '\n';
        summary << "failed,nan,nan,nan,nan\n";
        continue;
      }
      // The checkpoint carries the config narrowed to its own seed.
      ExperimentConfig own = cfg;
      own.seeds = {run.seed};
      save_checkpoint(out / "checkpoints" / (name + ".nbct"), *run.model, own.serialize());
      write_text(out / "logs" / (name + ".csv"), run.log.epochs_csv());

      const auto pred = predict(*run.model, test_set.normalized_images());
      std::size_t correct = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_set.labels[i];
      const double test_acc = static_cast<double>(correct) / static_cast<double>(pred.size());
      const EpochRecord& last = run.log.epochs.back();
      summary << "ok," << format_double(last.ce) << ',' << format_double(last.l_ss) << ','
              << format_double(last.train_acc) << ',' << format_double(test_acc) << '\n';
      std::printf("%-20s ce %.4f  train acc %.4f  test acc %.4f\n", name.c_str(), last.ce, last.train_acc,
                  test_acc);
    }
  }
  write_text(out / "train_summary.csv", summary.str());
  return failed ? kFailed : kOk;
}

// -- eval ---------------------------------------------------------------------------

std::vector<fs::path> expand_glob(const std::string& pattern) {
  const fs::path p(pattern);
  const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
  const std::string name = p.filename().string();
  std::vector<fs::path> out;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && fnmatch(name.c_str(), e.path().filename().c_str(), 0) == 0) {
        out.push_back(e.path());
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_eval(const Common& common, const std::string& checkpoint_glob) {
  const ExperimentConfig cfg = resolve(common);
  const fs::path out = cfg.out_dir;
  const std::string pattern =
      checkpoint_glob.empty() ? (out / "checkpoints" / "*.nbct").string() : checkpoint_glob;
  const auto checkpoints = expand_glob(pattern);
  if (checkpoints.empty()) throw InputError("no checkpoints match '" + pattern + "'");
  write_text(out / "config.ini", cfg.serialize());
  const Dataset test_set = load_split(cfg.data, "test");

  // One (checkpoint, perturbation) cell per job.
  struct Cell {
    std::size_t checkpoint;
    std::size_t spec;
  };
  std::vector<std::unique_ptr<Model>> models;
  std::vector<EvalRow> templates;
  for (const auto& path : checkpoints) {
    std::string run_text;
    models.push_back(load_checkpoint(path, &run_text));
    EvalRow t;
    t.rm_kind = family_name(models.back()->kind());
    t.regime = "unknown";
    if (!run_text.empty()) {
      const ExperimentConfig run = ExperimentConfig::parse(run_text);
      t.seed = run.seeds.front();
      t.regime = to_string(run.train.regime);
    }
    t.model_id = t.rm_kind + "-" + t.regime;
    templates.push_back(t);
  }
  std::vector<Cell> cells;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    for (std::size_t s = 0; s < cfg.perturbations.size(); ++s) cells.push_back({c, s});
  }
  std::vector<EvalRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& cell = cells[i];
      EvalRow r = robust_accuracy(*models[cell.checkpoint], test_set, cfg.perturbations[cell.spec],
                                  derive_seed(cfg.eval_seed, "eval-" + std::to_string(templates[cell.checkpoint].seed)));
      r.model_id = templates[cell.checkpoint].model_id;
      r.rm_kind = templates[cell.checkpoint].rm_kind;
      r.regime = templates[cell.checkpoint].regime;
      r.seed = templates[cell.checkpoint].seed;
      rows[i] = std::move(r);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(cfg.jobs, 1, std::max<std::size_t>(cells.size(), 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  const RobustnessTable table = summarize(rows);
  write_text(out / "eval_rows.csv", rows_csv(rows));
  write_text(out / "robustness_table.csv", table.csv());
  write_text(out / "robustness_table.txt", table.text());
  std::cout << table.text();
  for (const auto& r : rows) {
    if (r.degenerate) std::cerr << "warning: " << r.model_id << " seed " << r.seed << " classifies no test item correctly\n";
  }
  return kOk;
}

// -- attack -------------------------------------------------------------------------

/// Binary (P5) or ASCII (P2) 8-bit PGM.
Tensor read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open image '" + path.string() + "'");
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P2") throw ParseError(path.string() + ": not a PGM file (magic '" + magic + "')");
  auto next_number = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    long v = -1;
    in >> v;
    if (!in || v < 0) throw ParseError(path.string() + ": bad PGM header");
    return static_cast<std::size_t>(v);
  };
  const std::size_t w = next_number(), h = next_number(), maxval = next_number();
  if (maxval == 0 || maxval > 255) throw ParseError(path.string() + ": only 8-bit PGM is supported");
  std::vector<double> px(w * h);
  if (magic == "P5") {
    in.get();
    std::vector<unsigned char> bytes(px.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ParseError(path.string() + ": truncated pixel data");
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = bytes[i] * 255.0 / static_cast<double>(maxval);
  } else {
    for (auto& v : px) v = static_cast<double>(next_number()) * 255.0 / static_cast<double>(maxval);
  }
  return Tensor({1, 1, h, w}, std::move(px));
}

void write_pgm(const fs::path& path, const Tensor& raw) {
  const std::size_t h = raw.dim(2), w = raw.dim(3);
  std::ostringstream os;
  os << "P5\n" << w << ' ' << h << "\n255\n";
  std::string body(h * w, '\0');
  for (std::size_t i = 0; i < body.size(); ++i) {
    body[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(raw[i], 0.0, 255.0))));
  }
  write_text(path, os.str() + body);
}

int cmd_attack(const Common& common, const std::string& checkpoint, const std::string& image,
               const std::string& spec_text, int label) {
  if (!fs::exists(checkpoint)) throw InputError("checkpoint '" + checkpoint + "' not found");
  const auto model = load_checkpoint(checkpoint);
  const PerturbationSpec spec = PerturbationSpec::parse(spec_text);
  const Tensor raw = read_pgm(image);
  const std::size_t size = model->config().image_size;
  if (raw.dim(2) != size || raw.dim(3) != size) {
    throw InputError("image is " + std::to_string(raw.dim(3)) + "x" + std::to_string(raw.dim(2)) +
                     ", model expects " + std::to_string(size) + "x" + std::to_string(size));
  }
  const Normalization norm = normalization_for(model->config().dataset);
  const int clean = predict(*model, norm.apply(raw))[0];
  const int target = label >= 0 ? label : clean;
  const std::vector<int> labels{target};
  const std::uint64_t seed = common.seed >= 0 ? static_cast<std::uint64_t>(common.seed) : 0;
  const Tensor adv = perturb_inputs(*model, raw, labels, spec, norm, seed);
  const int attacked = predict(*model, adv)[0];

  // Back to pixels for inspection.
  std::vector<double> px(adv.numel());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = adv[i] * norm.std + norm.mean;
  const Tensor adv_raw(raw.shape(), std::move(px));

  const fs::path out = common.out.empty() ? fs::path("attack") : fs::path(common.out);
  std::ostringstream run;
  run << "[attack]\ncheckpoint = " << checkpoint << "\nimage = " << image << "\nspec = " << spec.to_string()
      << "\nlabel = " << target << "\nseed = " << seed << '\n';
  write_text(out / "attack.ini", run.str());
  write_pgm(out / "perturbed.pgm", adv_raw);
  std::ostringstream pred;
  pred << "label,clean_prediction,perturbed_prediction,linf_pixels\n"
       << target << ',' << clean << ',' << attacked << ',' << format_double(max_abs_diff(adv_raw, raw)) << '\n';
  write_text(out / "prediction.csv", pred.str());
  std::cout << "label " << target << ": clean prediction " << clean << ", perturbed prediction " << attacked
            << " (" << spec.label() << ")\n";
  return kOk;
}

// -- check --------------------------------------------------------------------------

int cmd_check(const Common& common, const std::string& suite, const std::string& checkpoint) {
  const auto& names = check_suite_names();
  if (suite != "all" && std::find(names.begin(), names.end(), suite) == names.end()) {
    throw ConfigError("unknown check suite '" + suite + "' (expected autodiff, ode, flow, gronwall or all)");
  }
  CheckOptions options;
  if (common.seed >= 0) options.seed = static_cast<std::uint64_t>(common.seed);
  const fs::path out = common.out.empty() ? fs::path("checks") : fs::path(common.out);
  if (suite == "flow" || suite == "all") options.curve_dir = out / "curves";
  std::ostringstream run;
  run << "[check]\nsuite = " << suite << "\nseed = " << options.seed << "\ncheckpoint = " << checkpoint << '\n';
  write_text(out / "check.ini", run.str());

  std::vector<CheckResult> results = run_check_suite(suite, options);

  if (!checkpoint.empty()) {
    if (!fs::exists(checkpoint)) throw InputError("checkpoint '" + checkpoint + "' not found");
    std::string run_text;
    const auto model = load_checkpoint(checkpoint, &run_text);
    const ExperimentConfig cfg = run_text.empty() ? resolve(common) : ExperimentConfig::parse(run_text);
    const Dataset test_set = load_split(cfg.data, "test");
    const std::vector<double> deltas{1e-3, 1e-2, 1e-1, 1.0};
    const FlowAudit audit =
        trained_model_flow_audit(*model, test_set.normalized_images(), 64, deltas, options.seed);
    std::ostringstream csv;
    csv << "delta,probe,amplification\n";
    for (std::size_t d = 0; d < deltas.size(); ++d) {
      for (std::size_t p = 0; p < audit.amplification[d].size(); ++p) {
        csv << format_double(deltas[d]) << ',' << p << ',' << format_double(audit.amplification[d][p]) << '\n';
      }
      results.push_back({"flow", "amplification_median_delta_" + format_double(deltas[d]),
                         std::isfinite(audit.median_amplification[d]), "median",
                         audit.median_amplification[d], "measurement only"});
    }
    if (audit.mean_steady_gap >= 0.0) {
      results.push_back({"flow", "mean_steady_gap", std::isfinite(audit.mean_steady_gap), "mean",
                         audit.mean_steady_gap, "||z(2T) - z(T)|| over the test split"});
    }
    write_text(out / "flow_audit.csv", csv.str());
  }

  write_text(out / "checks.csv", check_results_csv(results));
  std::size_t failed = 0;
  for (const auto& r : results) {
    std::printf("%s  %-10s %-36s %s = %s\n", r.passed ? "PASS" : "FAIL", r.suite.c_str(), r.name.c_str(),
                r.metric.c_str(), format_double(r.value).c_str());
    failed += !r.passed;
  }
  std::printf("%zu of %zu checks passed\n", results.size() - failed, results.size());
  return failed ? kFailed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robustness workbench for neural ODE classifiers"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool config) {
    if (config) sub->add_option("--config", common.config, "Experiment config (INI)");
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--jobs", common.jobs, "Worker threads (default from config, 1)");
    sub->add_option("--seed", common.seed, "Use this single seed");
  };

  auto* train = app.add_subcommand("train", "Train every configured model family for every seed");
  add_common(train, true);

  std::string checkpoint_glob;
  auto* eval = app.add_subcommand("eval", "Filtered robust accuracy of checkpoints under the configured perturbations");
  add_common(eval, true);
  eval->add_option("--checkpoints", checkpoint_glob, "Checkpoint glob (default <out>/checkpoints/*.nbct)");

  std::string attack_checkpoint, image, spec;
  int label = -1;
  auto* attack = app.add_subcommand("attack", "Perturb one image and report the prediction pair");
  add_common(attack, false);
  attack->add_option("--checkpoint", attack_checkpoint, "Model checkpoint")->required();
  attack->add_option("--image", image, "Input image (8-bit PGM)")->required();
  attack->add_option("--spec", spec, "Perturbation, e.g. fgsm(0.3) or pgd(0.2,40,0.02,rand)")->required();
  attack->add_option("--label", label, "True label (default: the clean prediction)");

  std::string suite = "all", flow_checkpoint;
  auto* check = app.add_subcommand("check", "Run property checks; exit 1 if any fails");
  add_common(check, true);
  check->add_option("--suite", suite, "autodiff, ode, flow, gronwall or all");
  check->add_option("--checkpoint", flow_checkpoint, "Also audit this trained ODE model's flow");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, checkpoint_glob);
    if (*attack) return cmd_attack(common, attack_checkpoint, image, spec, label);
    if (*check) return cmd_check(common, suite, flow_checkpoint);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kBadInput;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kBadInput;
}
