#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "nodebench/data.hpp"
#include "nodebench/models.hpp"
#include "nodebench/tensor.hpp"

namespace nodebench {

enum class PerturbationKind { kGaussian, kFgsm, kPgd };

/// One evaluation perturbation.
///
/// Gaussian σ is in raw pixel units (0–255) and is added before
/// normalization. Attack budgets ε are fractions of the valid input range,
/// so on MNIST (x/255) FGSM-0.3 moves each pixel by at most 0.3. A
/// magnitude of exactly 0 is accepted and leaves inputs unchanged.
struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::kGaussian;
  double magnitude = 0.0;
  std::size_t steps = 40;
  double step_size = 0.0;  // 0 selects magnitude / 10
  bool random_start = true;
  bool clip_to_valid_range = false;  // Gaussian only; attacks always clip

  static PerturbationSpec gaussian(double sigma, bool clip = false);
  static PerturbationSpec fgsm(double epsilon);
  static PerturbationSpec pgd(double epsilon, std::size_t steps = 40, double step_size = 0.0,
                              bool random_start = true);

  void validate() const;
  double effective_step_size() const { return step_size > 0.0 ? step_size : magnitude / 10.0; }
  /// "gaussian(100)", "fgsm(0.3)", "pgd(0.2,40,0.02,rand)", "gaussian(75,clip)".
  std::string to_string() const;
  /// Short column label, e.g. "sigma=100", "FGSM-0.3", "PGD-0.2".
  std::string label() const;
  static PerturbationSpec parse(const std::string& text);
};

std::string to_string(PerturbationKind kind);

/// ∂/∂x of the batch-summed cross-entropy, so each row holds its own
/// sample's gradient. Model parameter gradients are left untouched.
Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const int> labels);

/// raw + N(0, σ²) noise, deterministic in `seed`; optionally clipped to [0,255].
Tensor gaussian_perturb(const Tensor& raw, double sigma, std::uint64_t seed, bool clip = false);

/// x' = clip(x + ε·range·sign(∇x L)) on normalized inputs; sign(0) = 0.
Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, double epsilon,
            const Normalization& norm);

/// Projected sign-gradient ascent inside the ℓ∞ ball of radius ε·range
/// around x, clipped to the valid range after every projection.
Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> labels, double epsilon,
           std::size_t steps, double step_size, bool random_start, std::uint64_t seed,
           const Normalization& norm);

/// Applies `spec` to raw images and returns normalized model inputs.
Tensor perturb_inputs(const Classifier& model, const Tensor& raw, std::span<const int> labels,
                      const PerturbationSpec& spec, const Normalization& norm, std::uint64_t seed);

}  // namespace nodebench
