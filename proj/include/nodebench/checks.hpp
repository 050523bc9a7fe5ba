#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nodebench/properties.hpp"
#include "nodebench/tensor.hpp"

namespace nodebench {

struct GradientCheck {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_relative = 0.0;  // over all checked coordinates
  std::string worst;            // description of the worst failing coordinate
};

/// Reverse-mode gradients of `loss_fn` against central differences on
/// `coords` coordinates: one per tensor first, then uniformly random ones.
/// Agreement means |a - n| <= atol or <= rtol * max(|a|, |n|).
GradientCheck gradient_check(const std::function<Tensor()>& loss_fn,
                             std::vector<std::pair<std::string, Tensor>> params, std::size_t coords,
                             std::uint64_t seed, double step = 1e-6, double rtol = 1e-4,
                             double atol = 1e-8);

struct CheckOptions {
  std::uint64_t seed = 0;
  /// Parameter coordinates per MNIST model in the autodiff suite.
  std::size_t gradient_coordinates = 100;
  /// Input pixels per MNIST model in the autodiff suite.
  std::size_t input_coordinates = 25;
  std::size_t random_systems = 100;
  std::size_t shift_systems = 50;
  /// When set, the flow suite writes one curve CSV per system here.
  std::filesystem::path curve_dir;
};

/// autodiff, ode, flow, gronwall.
const std::vector<std::string>& check_suite_names();

/// Runs one named suite ("all" runs every suite). ConfigError for unknown names.
std::vector<CheckResult> run_check_suite(const std::string& suite, const CheckOptions& options);

}  // namespace nodebench
