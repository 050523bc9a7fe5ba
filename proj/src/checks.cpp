#include "nodebench/checks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "nodebench/models.hpp"
#include "nodebench/ode.hpp"
#include "nodebench/ops.hpp"
#include "nodebench/perturb.hpp"
#include "nodebench/rng.hpp"
#include "nodebench/tape.hpp"
#include "nodebench/text.hpp"

namespace nodebench {

namespace {

bool agrees(double analytic, double numeric, double rtol, double atol) {
  const double diff = std::abs(analytic - numeric);
  return diff <= atol || diff <= rtol * std::max(std::abs(analytic), std::abs(numeric));
}

/// Central differences of `loss_value` in coordinate `i` of `p`, compared to `analytic`.
void compare_coordinate(const std::function<double()>& loss_value, Tensor& p, std::size_t i,
                        double analytic, const std::string& name, double step, double rtol, double atol,
                        GradientCheck& r) {
  const double saved = p[i];
  p.mutable_data()[i] = saved + step;
  const double plus = loss_value();
  p.mutable_data()[i] = saved - step;
  const double minus = loss_value();
  p.mutable_data()[i] = saved;
  const double numeric = (plus - minus) / (2.0 * step);
  const double magnitude = std::max(std::abs(analytic), std::abs(numeric));
  ++r.checked;
  // Below atol / rtol the absolute floor decides, so the ratio is not reported.
  if (magnitude >= atol / rtol) {
    r.worst_relative = std::max(r.worst_relative, std::abs(analytic - numeric) / magnitude);
  }
  if (agrees(analytic, numeric, rtol, atol)) return;
  ++r.failures;
  r.worst = name + "[" + std::to_string(i) + "] analytic " + format_double(analytic) + " numeric " +
            format_double(numeric);
}

std::string fraction(const GradientCheck& g) {
  return "failures=" + std::to_string(g.failures) + "/" + std::to_string(g.checked) +
         (g.worst.empty() ? std::string() : " worst " + g.worst);
}

// -- autodiff ---------------------------------------------------------------------

std::vector<CheckResult> autodiff_suite(const CheckOptions& o) {
  std::vector<CheckResult> out;
  const ModelConfig cfg = model_config_for("mnist");
  Rng rng(derive_seed(o.seed, "autodiff-input"));
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  std::vector<double> values(28 * 28);
  for (auto& v : values) v = pixel(rng);
  const Tensor x({1, 1, 28, 28}, values);
  const std::vector<int> labels{3};

  for (RmKind kind : {RmKind::kResidual, RmKind::kWeightTiedResidual, RmKind::kNode, RmKind::kTisode}) {
    const Model m(kind, cfg, derive_seed(o.seed, "autodiff-init-" + to_string(kind)));
    auto loss = [&] {
      if (kind == RmKind::kTisode) {
        const ForwardResult r = m.forward_detailed(x, true);
        return add(softmax_cross_entropy(r.logits, labels), scale(r.steady_state_loss, 0.1));
      }
      return softmax_cross_entropy(m.forward(x), labels);
    };
    const GradientCheck g = gradient_check(loss, m.named_parameters(), o.gradient_coordinates,
                                           derive_seed(o.seed, "autodiff-coords-" + to_string(kind)));
    out.push_back({"autodiff", "parameter_gradients_" + family_name(kind), g.failures == 0,
                   "worst_relative", g.worst_relative, fraction(g)});

    // Input gradient as used by the attacks: summed CE, parameters frozen.
    const Tensor analytic = input_gradient(m, x, labels);
    Tensor probe = x.clone();
    auto value = [&] {
      NoGradGuard guard;
      return softmax_cross_entropy(m.forward(probe), labels, Reduction::kSum).item();
    };
    GradientCheck in;
    Rng pick(derive_seed(o.seed, "autodiff-pixels-" + to_string(kind)));
    std::uniform_int_distribution<std::size_t> where(0, x.numel() - 1);
    for (std::size_t c = 0; c < o.input_coordinates; ++c) {
      const std::size_t i = where(pick);
      compare_coordinate(value, probe, i, analytic[i], "input", 1e-6, 1e-4, 1e-8, in);
    }
    out.push_back({"autodiff", "input_gradients_" + family_name(kind), in.failures == 0, "worst_relative",
                   in.worst_relative, fraction(in)});
  }
  return out;
}

// -- ode --------------------------------------------------------------------------

FunctionDynamics scalar_field(std::function<double(double, double)> fn, bool autonomous) {
  return FunctionDynamics(
      [fn](const Tensor& z, double t) {
        return elementwise(z, [fn, t](double v) { return fn(v, t); }, [](double) { return 0.0; });
      },
      autonomous);
}

/// Seeded autonomous field on a [1, d] state: either A z or a·tanh(W z + b).
FunctionDynamics random_autonomous_field(std::size_t index, std::uint64_t seed, std::size_t& dim) {
  Rng rng(derive_seed(seed, "shift-system-" + std::to_string(index)));
  dim = 2 + index % 7;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto matrix = [&](double spread) {
    std::vector<double> v(dim * dim);
    for (auto& e : v) e = spread * u(rng);
    return Tensor({dim, dim}, std::move(v));
  };
  if (index % 2 == 0) {
    const Tensor a = matrix(1.5 / static_cast<double>(dim));
    return FunctionDynamics([a](const Tensor& z, double) { return linear(z, a, Tensor()); }, true);
  }
  const Tensor w = matrix(2.0 / std::sqrt(static_cast<double>(dim)));
  std::vector<double> bias(dim);
  for (auto& e : bias) e = u(rng);
  const Tensor b({dim}, std::move(bias));
  const double amp = 0.5 + 0.5 * (u(rng) + 1.0);
  return FunctionDynamics(
      [w, b, amp](const Tensor& z, double) {
        return elementwise(
            linear(z, w, b), [amp](double v) { return amp * std::tanh(v); },
            [amp](double v) { return amp * (1.0 - std::tanh(v) * std::tanh(v)); });
      },
      true);
}

double l2(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<CheckResult> ode_suite(const CheckOptions& o) {
  NoGradGuard no_grad;
  std::vector<CheckResult> out;

  const auto growth = scalar_field([](double z, double) { return z; }, true);
  const double euler = integrate(growth, Tensor::from({1.0}), OdeConfig{}).final_state()[0];
  const double err = std::abs(euler - std::pow(1.1, 10));
  out.push_back({"ode", "euler_growth", err <= 1e-12, "abs_error", err, "z' = z, h = 0.1, T = 1"});

  const auto ramp = scalar_field([](double, double t) { return 2.0 * t; }, false);
  const double rk = integrate(ramp, Tensor::from({0.0}), OdeConfig{1.0, 0.1, Scheme::kRk4}).final_state()[0];
  out.push_back({"ode", "rk4_polynomial", std::abs(rk - 1.0) <= 1e-12, "abs_error", std::abs(rk - 1.0),
                 "z' = 2t, h = 0.1, T = 1"});

  double worst_shift = 0.0, worst_slack = -1e300;
  std::size_t shift_fail = 0, bound_fail = 0;
  for (std::size_t s = 0; s < o.shift_systems; ++s) {
    std::size_t dim = 0;
    const FunctionDynamics f = random_autonomous_field(s, o.seed, dim);
    Rng rng(derive_seed(o.seed, "shift-start-" + std::to_string(s)));
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<double> start(dim);
    for (auto& e : start) e = u(rng);
    const Tensor z0({1, dim}, start);
    for (Scheme scheme : {Scheme::kEuler, Scheme::kRk4}) {
      const OdeConfig cfg{1.0, 0.1, scheme};
      const Tensor zT = integrate(f, z0, cfg).final_state();
      double bound = 0.0;
      if (scheme == Scheme::kEuler) {
        const Tensor q = steady_state_integral(f, zT, cfg);
        for (double v : q.data()) bound += v * v;
        bound = std::sqrt(bound);
      }
      bool exact = true;
      for (std::size_t k = 0; k <= cfg.num_steps(); ++k) {
        const ShiftPair p = time_shift(f, z0, cfg.time_at(k), cfg);
        const double d = max_abs_diff(p.shifted_terminal, p.original_late);
        worst_shift = std::max(worst_shift, d);
        exact = exact && bitwise_equal(p.shifted_terminal, p.original_late);
        if (scheme == Scheme::kEuler) {
          const double slack = l2(p.shifted_terminal, zT) - bound;
          worst_slack = std::max(worst_slack, slack);
          bound_fail += slack > 1e-9;
        }
      }
      shift_fail += !exact;
    }
  }
  out.push_back({"ode", "time_shift_identity", shift_fail == 0, "max_abs_diff", worst_shift,
                 std::to_string(o.shift_systems) + " systems x {euler, rk4}, every grid shift; non-bitwise runs=" +
                     std::to_string(shift_fail)});
  out.push_back({"ode", "deviation_bound", bound_fail == 0, "max_excess", worst_slack,
                 "||z(T+T') - z(T)|| minus the steady-state integral norm; violations=" +
                     std::to_string(bound_fail)});

  const auto field = scalar_field([](double z, double) { return -z + std::sin(z); }, true);
  const Tensor z0 = Tensor::from({1.3});
  const double ref = integrate(field, z0, OdeConfig{1.0, 1e-3, Scheme::kRk4}).final_state()[0];
  const double coarse = integrate(field, z0, OdeConfig{1.0, 0.1, Scheme::kEuler}).final_state()[0];
  const double fine = integrate(field, z0, OdeConfig{1.0, 0.05, Scheme::kEuler}).final_state()[0];
  const double ratio = std::abs(coarse - ref) / std::abs(fine - ref);
  out.push_back({"ode", "euler_first_order", ratio >= 1.5 && ratio <= 2.5, "error_ratio", ratio,
                 "error(h = 0.1) / error(h = 0.05)"});
  return out;
}

// -- flow / gronwall -----------------------------------------------------------------

std::vector<ScalarSystem> suite_systems(const CheckOptions& o) {
  auto systems = standard_systems();
  const auto extra = random_monotone_systems(o.random_systems, o.seed);
  systems.insert(systems.end(), extra.begin(), extra.end());
  return systems;
}

std::vector<CheckResult> flow_suite(const CheckOptions& o) {
  std::vector<CheckResult> out;
  std::size_t random_fail = 0, flips = 0;
  double random_min_gap = 1e300;
  if (!o.curve_dir.empty()) std::filesystem::create_directories(o.curve_dir);
  const auto systems = suite_systems(o);
  for (std::size_t i = 0; i < systems.size(); ++i) {
    const ScalarSystem& s = systems[i];
    const NonIntersectionReport r = non_intersection_check(s);
    const bool half = non_intersection_check(halved_step(s)).passed;
    flips += half != r.passed;
    if (!o.curve_dir.empty()) {
      std::ofstream f(o.curve_dir / ("curves_" + s.name + ".csv"));
      f << r.curves.csv();
      if (!f) throw InputError("cannot write curves for " + s.name);
    }
    if (i < 3) {
      out.push_back({"flow", "non_intersection_" + s.name, r.passed, "min_gap", r.min_gap,
                     "probe_gap=" + format_double(r.probe_gap) + " outer_gap=" + format_double(r.outer_gap)});
    } else {
      random_fail += !r.passed;
      random_min_gap = std::min(random_min_gap, r.min_gap);
    }
  }
  out.push_back({"flow", "non_intersection_random", random_fail == 0, "min_gap", random_min_gap,
                 std::to_string(o.random_systems) + " monotone fields; failures=" + std::to_string(random_fail)});
  out.push_back({"flow", "step_halving", flips == 0, "flipped", static_cast<double>(flips),
                 "verdicts compared at h and h/2"});
  return out;
}

std::vector<std::pair<double, double>> start_pairs(const ScalarSystem& s, std::size_t count) {
  std::vector<std::pair<double, double>> pairs;
  const double lo = s.starts.front(), hi = s.starts.back();
  for (std::size_t i = 0; i < count; ++i) {
    const double a = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count);
    pairs.emplace_back(a, a + 0.01 + 0.1 * (hi - lo) * static_cast<double>(i % 3));
  }
  return pairs;
}

std::vector<CheckResult> gronwall_suite(const CheckOptions& o) {
  std::vector<CheckResult> out;
  std::size_t random_fail = 0, flips = 0;
  double random_max = 0.0;
  const auto systems = suite_systems(o);
  for (std::size_t i = 0; i < systems.size(); ++i) {
    const ScalarSystem& s = systems[i];
    const auto pairs = start_pairs(s, i < 3 ? 10 : 4);
    const GronwallReport r = gronwall_check(s, pairs);
    flips += gronwall_check(halved_step(s), pairs).passed != r.passed;
    if (i < 3) {
      out.push_back({"gronwall", "bound_" + s.name, r.passed, "max_ratio", r.max_ratio,
                     "pairs=" + std::to_string(r.pairs) + " worst_t=" + format_double(r.worst_time)});
    } else {
      random_fail += !r.passed;
      random_max = std::max(random_max, r.max_ratio);
    }
  }
  out.push_back({"gronwall", "bound_random", random_fail == 0, "max_ratio", random_max,
                 std::to_string(o.random_systems) + " monotone fields; failures=" + std::to_string(random_fail)});
  out.push_back({"gronwall", "step_halving", flips == 0, "flipped", static_cast<double>(flips),
                 "verdicts compared at h and h/2"});
  return out;
}

}  // namespace

GradientCheck gradient_check(const std::function<Tensor()>& loss_fn,
                             std::vector<std::pair<std::string, Tensor>> params, std::size_t coords,
                             std::uint64_t seed, double step, double rtol, double atol) {
  if (params.empty()) throw UsageError("gradient_check needs at least one tensor");
  for (auto& [name, p] : params) p.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) analytic.push_back(p.grad());

  auto value = [&] {
    NoGradGuard guard;
    return loss_fn().item();
  };
  Rng rng(derive_seed(seed, "gradient-check"));
  GradientCheck r;
  for (std::size_t c = 0; c < coords; ++c) {
    const std::size_t t =
        c < params.size() ? c : std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
    Tensor& p = params[t].second;
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p.numel() - 1)(rng);
    compare_coordinate(value, p, i, analytic[t][i], params[t].first, step, rtol, atol, r);
  }
  for (auto& [name, p] : params) p.zero_grad();
  return r;
}

const std::vector<std::string>& check_suite_names() {
  static const std::vector<std::string> names{"autodiff", "ode", "flow", "gronwall"};
  return names;
}

std::vector<CheckResult> run_check_suite(const std::string& suite, const CheckOptions& options) {
  if (suite == "all") {
    std::vector<CheckResult> out;
    for (const auto& name : check_suite_names()) {
      auto part = run_check_suite(name, options);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }
  if (suite == "autodiff") return autodiff_suite(options);
  if (suite == "ode") return ode_suite(options);
  if (suite == "flow") return flow_suite(options);
  if (suite == "gronwall") return gronwall_suite(options);
  throw ConfigError("unknown check suite '" + suite + "' (expected autodiff, ode, flow, gronwall or all)");
}

}  // namespace nodebench
