#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nodebench/data.hpp"
#include "nodebench/models.hpp"

namespace nodebench {

enum class Regime { kClean, kGaussian, kAdversarial };

std::string to_string(Regime regime);
Regime parse_regime(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Fractions of `epochs` at which the learning rate is multiplied by lr_decay.
  std::vector<double> lr_milestones{0.5, 0.75};
  double lr_decay = 0.1;
  Regime regime = Regime::kClean;
  /// Gaussian regime: per-sample σ drawn uniformly from this set (pixel units).
  std::vector<double> sigmas{50.0, 75.0, 100.0};
  /// Adversarial regime: FGSM budget as a fraction of the input range.
  double adversarial_epsilon = 0.3;
  /// Weight of the steady-state term; only used for tisode models.
  double lambda_ss = 0.1;
  std::uint64_t seed = 0;
  /// Stop after this many optimizer steps (0 = run all epochs).
  std::size_t max_steps = 0;

  void validate() const;
  /// Learning rate in force during `epoch` (0-based).
  double learning_rate_at(std::size_t epoch) const;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double total = 0.0;
  double ce = 0.0;
  double l_ss = 0.0;  // batch mean; 0 for models without a steady-state term
  std::size_t rows = 0;  // originals plus perturbed copies
};

struct EpochRecord {
  std::size_t epoch = 0;
  double ce = 0.0;
  double l_ss = 0.0;
  double train_acc = 0.0;  // on the unperturbed half of each batch
  double lr = 0.0;
};

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  /// "epoch,ce,l_ss,train_acc,lr" followed by one row per epoch.
  std::string epochs_csv() const;
};

/// Trains `model` in place. Each batch holds the originals plus, for the
/// gaussian and adversarial regimes, one perturbed copy of every original.
/// Loss = CE + lambda_ss * (steady-state loss / rows) for tisode models.
/// A non-finite loss or gradient raises NumericError naming epoch and step.
TrainingLog train(Model& model, const Dataset& data, const TrainConfig& cfg);

using ModelFactory = std::function<std::unique_ptr<Model>(std::uint64_t seed)>;

struct SeedRun {
  std::uint64_t seed = 0;
  std::unique_ptr<Model> model;
  TrainingLog log;
  std::string error;  // empty on success
};

/// Independent runs that differ only in seed (both model init and training).
/// Up to `jobs` runs execute concurrently; a failing run records its error and
/// leaves the others unaffected.
std::vector<SeedRun> multi_seed_train(const ModelFactory& factory, const Dataset& data,
                                      const TrainConfig& cfg, std::span<const std::uint64_t> seeds,
                                      std::size_t jobs = 1);

}  // namespace nodebench
