#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nodebench/models.hpp"
#include "nodebench/perturb.hpp"
#include "nodebench/training.hpp"

namespace nodebench {

struct DataSpec {
  std::string dataset = "synthetic";  // mnist | synthetic
  std::string root;                   // MNIST directory; the environment may override it
  std::size_t train_size = 0;         // 0 keeps the whole split
  std::size_t test_size = 0;
  std::uint64_t seed = 0;             // subsetting and synthetic generation
  // synthetic only
  std::size_t n_per_class = 100;
  std::size_t classes = 10;
  double separation = 4.0;
};

/// Everything one experiment run needs. Serialized as an INI file with
/// sections [experiment], [data], [models], [train] and [eval]; every field is
/// written, so a saved config fully describes its run.
struct ExperimentConfig {
  std::string name = "experiment";
  std::filesystem::path out_dir = "runs";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t jobs = 1;

  DataSpec data;
  std::vector<RmKind> families{RmKind::kResidual, RmKind::kWeightTiedResidual, RmKind::kNode,
                               RmKind::kTisode};
  OdeConfig ode{};
  std::size_t weight_tied_repeats = 20;
  double weight_tied_scale = 1.0;
  TrainConfig train{};
  std::vector<PerturbationSpec> perturbations;
  std::uint64_t eval_seed = 0;

  void validate() const;
  ModelConfig model_config() const;

  std::string serialize() const;
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Name of the environment variable that overrides DataSpec::root.
inline constexpr const char* kDataRootEnv = "NODEBENCH_DATA_ROOT";

/// DataSpec::root unless the environment variable is set and nonempty.
std::string resolved_data_root(const DataSpec& spec);

/// "train" or "test" split of the configured dataset, subsampled when a size
/// is set. Synthetic data uses the first 80% of one blob draw for training and
/// the rest for testing, so both splits share class centres.
Dataset load_split(const DataSpec& spec, const std::string& split);

}  // namespace nodebench
