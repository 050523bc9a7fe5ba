#include "nodebench/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "nodebench/ops.hpp"
#include "nodebench/optim.hpp"
#include "nodebench/perturb.hpp"
#include "nodebench/rng.hpp"
#include "nodebench/tape.hpp"
#include "nodebench/text.hpp"

namespace nodebench {

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::kClean: return "clean";
    case Regime::kGaussian: return "gaussian";
    case Regime::kAdversarial: return "adversarial";
  }
  return "unknown";
}

Regime parse_regime(const std::string& name) {
  if (name == "clean") return Regime::kClean;
  if (name == "gaussian") return Regime::kGaussian;
  if (name == "adversarial") return Regime::kAdversarial;
  throw ConfigError("unknown training regime '" + name + "' (expected clean, gaussian or adversarial)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(lambda_ss >= 0.0)) throw ConfigError("lambda_ss must be >= 0");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  for (double m : lr_milestones) {
    if (!(m > 0.0 && m <= 1.0)) throw ConfigError("lr milestones must lie in (0, 1]");
  }
  if (regime == Regime::kGaussian) {
    if (sigmas.empty()) throw ConfigError("gaussian regime needs a nonempty sigma set");
    for (double s : sigmas) {
      if (!(s > 0.0)) throw ConfigError("training sigmas must be positive");
    }
  }
  if (regime == Regime::kAdversarial && !(adversarial_epsilon > 0.0)) {
    throw ConfigError("adversarial_epsilon must be positive");
  }
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  double lr = learning_rate;
  for (double m : lr_milestones) {
    const auto at = static_cast<std::size_t>(std::floor(m * static_cast<double>(epochs)));
    if (epoch >= at) lr *= lr_decay;
  }
  return lr;
}

std::string TrainingLog::epochs_csv() const {
  std::ostringstream os;
  os << "epoch,ce,l_ss,train_acc,lr\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << format_double(e.ce) << ',' << format_double(e.l_ss) << ','
       << format_double(e.train_acc) << ',' << format_double(e.lr) << '\n';
  }
  return os.str();
}

namespace {

/// Normalized copies of `raw` with per-sample σ drawn from `sigmas`.
Tensor noisy_copies(const Tensor& raw, const std::vector<double>& sigmas, const Normalization& norm,
                    Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, sigmas.size() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = raw.dim(0);
  const std::size_t stride = raw.numel() / n;
  std::vector<double> v(raw.data().begin(), raw.data().end());
  for (std::size_t s = 0; s < n; ++s) {
    const double sigma = sigmas[pick(rng)];
    for (std::size_t i = 0; i < stride; ++i) v[s * stride + i] += sigma * normal(rng);
  }
  return norm.apply(Tensor(raw.shape(), std::move(v)));
}

}  // namespace

TrainingLog train(Model& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  const bool steady = model.kind() == RmKind::kTisode;
  Sgd optimizer(model.parameters(), SgdOptions{cfg.learning_rate, cfg.momentum, cfg.weight_decay});
  Rng order_rng(derive_seed(cfg.seed, "data"));
  Rng noise_rng(derive_seed(cfg.seed, "noise"));
  const Normalization& norm = data.normalization;

  TrainingLog log;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    optimizer.set_learning_rate(cfg.learning_rate_at(epoch));
    std::shuffle(order.begin(), order.end(), order_rng);
    double ce_sum = 0.0, lss_sum = 0.0;
    std::size_t batches = 0, correct = 0, seen = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && global_step >= cfg.max_steps) break;
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(cfg.batch_size, order.size() - start));
      const Dataset batch = data.select(idx);
      const Tensor clean = norm.apply(batch.images);
      std::vector<int> labels = batch.labels;
      Tensor inputs = clean;
      if (cfg.regime == Regime::kGaussian) {
        inputs = concat_batch({clean, noisy_copies(batch.images, cfg.sigmas, norm, noise_rng)});
        labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
      } else if (cfg.regime == Regime::kAdversarial) {
        inputs = concat_batch({clean, fgsm(model, clean, batch.labels, cfg.adversarial_epsilon, norm)});
        labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
      }

      StepRecord rec;
      rec.epoch = epoch;
      rec.step = global_step;
      rec.rows = labels.size();
      try {
        optimizer.zero_grad();
        const ForwardResult out = model.forward_detailed(inputs, steady);
        Tensor ce = softmax_cross_entropy(out.logits, labels);
        Tensor loss = ce;
        if (steady) {
          const Tensor lss = scale(out.steady_state_loss, 1.0 / static_cast<double>(labels.size()));
          rec.l_ss = lss.item();
          if (cfg.lambda_ss > 0.0) loss = add(ce, scale(lss, cfg.lambda_ss));
        }
        rec.ce = ce.item();
        rec.total = loss.item();
        backward(loss);
        for (const auto& p : model.parameters()) ensure_finite(p.grad_buffer(), "parameter gradient");
        optimizer.step();
        for (const auto& p : model.parameters()) ensure_finite(p.data(), "parameter value");

        const auto pred = argmax_rows(out.logits);
        for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == batch.labels[i];
        seen += idx.size();
      } catch (const NumericError& e) {
        Tape::active().clear();
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(global_step) + ": " + e.what());
      }
      ce_sum += rec.ce;
      lss_sum += rec.l_ss;
      ++batches;
      ++global_step;
      log.steps.push_back(rec);
    }

    if (batches == 0) break;
    EpochRecord er;
    er.epoch = epoch;
    er.ce = ce_sum / static_cast<double>(batches);
    er.l_ss = lss_sum / static_cast<double>(batches);
    er.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    er.lr = optimizer.learning_rate();
    log.epochs.push_back(er);
  }
  return log;
}

std::vector<SeedRun> multi_seed_train(const ModelFactory& factory, const Dataset& data,
                                      const TrainConfig& cfg, std::span<const std::uint64_t> seeds,
                                      std::size_t jobs) {
  if (seeds.empty()) throw ConfigError("multi_seed_train needs at least one seed");
  cfg.validate();
  std::vector<SeedRun> runs(seeds.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      SeedRun& run = runs[i];
      run.seed = seeds[i];
      try {
        run.model = factory(seeds[i]);
        TrainConfig local = cfg;
        local.seed = seeds[i];
        run.log = train(*run.model, data, local);
      } catch (const std::exception& e) {
        run.error = e.what();
      }
    }
  };

  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, runs.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return runs;
}

}  // namespace nodebench
