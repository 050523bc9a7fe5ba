#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nodebench/data.hpp"
#include "nodebench/models.hpp"
#include "nodebench/perturb.hpp"

namespace nodebench {

/// One (model, perturbation, seed) cell of the robustness protocol.
struct EvalRow {
  std::string model_id;
  std::string rm_kind;
  std::string regime;
  PerturbationSpec spec;
  std::uint64_t seed = 0;
  std::size_t n_total = 0;
  std::size_t n_filtered = 0;  // clean inputs the model gets right
  std::size_t n_robust = 0;    // of those, still right after perturbation
  double accuracy = 0.0;       // n_robust / n_filtered
  bool degenerate = false;     // n_filtered == 0; accuracy is meaningless
};

/// Classifies the clean inputs, keeps the correct ones, perturbs those and
/// reports the fraction still classified correctly. Labels on the returned row
/// other than the counts and spec are left for the caller to fill in.
EvalRow robust_accuracy(const Classifier& model, const Dataset& data, const PerturbationSpec& spec,
                        std::uint64_t seed);

/// Per-seed rows as CSV: model_id,rm_kind,regime,perturbation_kind,magnitude,
/// steps,seed,n_filtered,accuracy. Full precision.
std::string rows_csv(const std::vector<EvalRow>& rows);

struct TableCell {
  std::vector<double> per_seed;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

/// Rows are models (in first-appearance order), columns are perturbations.
struct RobustnessTable {
  std::vector<std::string> models;
  std::vector<PerturbationSpec> columns;
  std::vector<std::vector<TableCell>> cells;  // [model][column]

  const TableCell& cell(const std::string& model, const std::string& column_label) const;
  /// model,<label>_mean,<label>_std,... at full precision.
  std::string csv() const;
  /// Aligned text with percentages to one decimal, "mean ± std".
  std::string text() const;
};

/// Aggregates per-seed rows. Degenerate rows are excluded from the statistics.
RobustnessTable summarize(const std::vector<EvalRow>& rows);

}  // namespace nodebench
