#include "nodebench/ode.hpp"

#include <cmath>

#include "nodebench/ops.hpp"

namespace nodebench {

std::string to_string(Scheme scheme) { return scheme == Scheme::kEuler ? "euler" : "rk4"; }

Scheme parse_scheme(const std::string& name) {
  if (name == "euler") return Scheme::kEuler;
  if (name == "rk4") return Scheme::kRk4;
  throw ConfigError("unknown ODE scheme '" + name + "' (expected euler or rk4)");
}

std::size_t grid_steps(double duration, double step, const char* what) {
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("ODE step must be positive");
  if (!(duration >= 0.0) || !std::isfinite(duration)) {
    throw ConfigError(std::string(what) + " must be a nonnegative finite time");
  }
  const double ratio = duration / step;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigError(std::string(what) + " = " + std::to_string(duration) +
                      " is not a multiple of the step " + std::to_string(step));
  }
  return static_cast<std::size_t>(rounded);
}

void OdeConfig::validate() const {
  if (!(t_end > 0.0)) throw ConfigError("ODE horizon t_end must be positive");
  if (grid_steps(t_end, step, "ODE horizon t_end") == 0) {
    throw ConfigError("ODE horizon shorter than one step");
  }
}

std::size_t OdeConfig::num_steps() const {
  validate();
  return grid_steps(t_end, step, "ODE horizon t_end");
}

FunctionDynamics::FunctionDynamics(Fn fn, bool autonomous, std::vector<Tensor> parameters)
    : fn_(std::move(fn)), autonomous_(autonomous), parameters_(std::move(parameters)) {}

Tensor FunctionDynamics::evaluate(const Tensor& state, double t) const { return fn_(state, t); }

DivergenceError::DivergenceError(std::size_t step, const std::string& detail)
    : NumericError("ODE solution diverged at step " + std::to_string(step) + ": " + detail),
      step_(step) {}

namespace {

Tensor checked_evaluate(const Dynamics& f, const Tensor& z, double t) {
  Tensor dz = f.evaluate(z, t);
  if (dz.shape() != z.shape()) {
    throw ShapeError("dynamics changed the state shape from " + to_string(z.shape()) + " to " +
                     to_string(dz.shape()));
  }
  return dz;
}

/// One step from (z, t); `slope` receives f(z, t) for callers that need it.
Tensor step_once(const Dynamics& f, const Tensor& z, double t, double h, Scheme scheme,
                 Tensor* slope) {
  Tensor k1 = checked_evaluate(f, z, t);
  if (slope) *slope = k1;
  if (scheme == Scheme::kEuler) return add(z, scale(k1, h));
  const double half = 0.5 * h;
  Tensor k2 = checked_evaluate(f, add(z, scale(k1, half)), t + half);
  Tensor k3 = checked_evaluate(f, add(z, scale(k2, half)), t + half);
  Tensor k4 = checked_evaluate(f, add(z, scale(k3, h)), t + h);
  Tensor combo = add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4));
  return add(z, scale(combo, h / 6.0));
}

}  // namespace

Trajectory integrate(const Dynamics& f, const Tensor& z0, const OdeConfig& cfg) {
  const std::size_t steps = cfg.num_steps();
  ensure_finite(z0.data(), "ODE initial state");
  Trajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.times.push_back(0.0);
  traj.states.push_back(z0);
  for (std::size_t k = 0; k < steps; ++k) {
    try {
      traj.states.push_back(
          step_once(f, traj.states.back(), cfg.time_at(k), cfg.step, cfg.scheme, nullptr));
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericError& e) {
      throw DivergenceError(k, e.what());
    }
    traj.times.push_back(cfg.time_at(k + 1));
  }
  return traj;
}

Tensor advance(const Dynamics& f, const Tensor& z, std::size_t first_step, std::size_t steps,
               const OdeConfig& cfg) {
  cfg.validate();
  Tensor state = z;
  for (std::size_t k = first_step; k < first_step + steps; ++k) {
    try {
      state = step_once(f, state, cfg.time_at(k), cfg.step, cfg.scheme, nullptr);
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericError& e) {
      throw DivergenceError(k, e.what());
    }
  }
  return state;
}

Tensor steady_state_integral(const Dynamics& f, const Tensor& zT, const OdeConfig& cfg) {
  if (!f.autonomous()) {
    throw UsageError("steady-state loss is only defined for autonomous dynamics");
  }
  const std::size_t steps = cfg.num_steps();
  Tensor state = zT;
  Tensor total;
  for (std::size_t j = 0; j < steps; ++j) {
    const std::size_t k = steps + j;
    Tensor slope;
    try {
      Tensor next = step_once(f, state, cfg.time_at(k), cfg.step, cfg.scheme, &slope);
      Tensor piece = scale(abs(slope), cfg.step);
      total = total.defined() ? add(total, piece) : piece;
      state = std::move(next);
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericError& e) {
      throw DivergenceError(k, e.what());
    }
  }
  return total;
}

Tensor steady_state_loss(const Dynamics& f, const Tensor& zT, const OdeConfig& cfg) {
  return sum(sample_l2_norm(steady_state_integral(f, zT, cfg)));
}

ShiftPair time_shift(const Dynamics& f, const Tensor& z0, double t_prime, const OdeConfig& cfg) {
  if (!f.autonomous()) throw UsageError("time_shift requires autonomous dynamics");
  const std::size_t steps = cfg.num_steps();
  const std::size_t shift = grid_steps(t_prime, cfg.step, "time shift t_prime");
  if (shift > steps) throw ConfigError("time shift t_prime must not exceed the horizon");
  Tensor start = advance(f, z0, 0, shift, cfg);
  ShiftPair pair;
  pair.shifted_terminal = advance(f, start, 0, steps, cfg);
  pair.original_late = advance(f, z0, 0, steps + shift, cfg);
  return pair;
}

}  // namespace nodebench
