#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "nodebench/tensor.hpp"

namespace nodebench {

enum class Scheme { kEuler, kRk4 };

std::string to_string(Scheme scheme);
Scheme parse_scheme(const std::string& name);

/// Fixed-step solver settings. The horizon must be a whole number of steps.
struct OdeConfig {
  double t_end = 1.0;
  double step = 0.1;
  Scheme scheme = Scheme::kEuler;

  /// Throws ConfigError unless t_end / step is a positive integer.
  void validate() const;
  std::size_t num_steps() const;
  /// Grid time k * step.
  double time_at(std::size_t k) const { return static_cast<double>(k) * step; }
};

/// Right-hand side f(z, t) of dz/dt = f. Output shape equals state shape.
/// Autonomous dynamics must ignore the time argument.
class Dynamics {
 public:
  virtual ~Dynamics() = default;
  virtual Tensor evaluate(const Tensor& state, double t) const = 0;
  virtual bool autonomous() const = 0;
  virtual std::vector<Tensor> parameters() const { return {}; }
};

/// Dynamics from a callable; handy for closed-form systems and tests.
class FunctionDynamics final : public Dynamics {
 public:
  using Fn = std::function<Tensor(const Tensor& state, double t)>;

  FunctionDynamics(Fn fn, bool autonomous, std::vector<Tensor> parameters = {});

  Tensor evaluate(const Tensor& state, double t) const override;
  bool autonomous() const override { return autonomous_; }
  std::vector<Tensor> parameters() const override { return parameters_; }

 private:
  Fn fn_;
  bool autonomous_;
  std::vector<Tensor> parameters_;
};

/// A non-finite state was produced; `step()` is the failing step index.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t step, const std::string& detail);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Tensor> states;

  const Tensor& final_state() const { return states.back(); }
};

/// Solves from z0 over [0, cfg.t_end]. All arithmetic goes through the
/// differentiable ops, so gradients flow through every step.
Trajectory integrate(const Dynamics& f, const Tensor& z0, const OdeConfig& cfg);

/// Advances `steps` grid steps starting at grid index `first_step`; returns
/// only the final state.
Tensor advance(const Dynamics& f, const Tensor& z, std::size_t first_step, std::size_t steps,
               const OdeConfig& cfg);

/// Left-endpoint quadrature of |f| over [T, 2T] continuing from zT on the
/// solver grid: Q = sum_k h * |f(z_k)|, same shape as the state.
Tensor steady_state_integral(const Dynamics& f, const Tensor& zT, const OdeConfig& cfg);

/// Sum over the leading (sample) axis of ||Q_i||_2. Requires autonomous f.
Tensor steady_state_loss(const Dynamics& f, const Tensor& zT, const OdeConfig& cfg);

struct ShiftPair {
  Tensor shifted_terminal;  // solution started at z(T') evaluated at T
  Tensor original_late;     // original solution evaluated at T + T'
};

/// Both members of the time-shift identity for autonomous f; t_prime must be
/// a grid multiple in [0, T].
ShiftPair time_shift(const Dynamics& f, const Tensor& z0, double t_prime, const OdeConfig& cfg);

/// Number of grid steps in `duration`, or ConfigError if off-grid.
std::size_t grid_steps(double duration, double step, const char* what);

}  // namespace nodebench
