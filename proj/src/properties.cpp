#include "nodebench/properties.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "nodebench/ode.hpp"
#include "nodebench/ops.hpp"
#include "nodebench/rng.hpp"
#include "nodebench/tape.hpp"
#include "nodebench/text.hpp"

namespace nodebench {

double observed_lipschitz(const ScalarSystem& sys, std::size_t samples, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "lipschitz"));
  std::uniform_real_distribution<double> z(sys.domain_lo, sys.domain_hi);
  std::uniform_real_distribution<double> t(0.0, sys.t_end);
  double worst = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double a = z(rng), b = z(rng), time = t(rng);
    if (a == b) continue;
    worst = std::max(worst, std::abs(sys.field(a, time) - sys.field(b, time)) / std::abs(a - b));
  }
  return worst;
}

std::string CurveSet::csv() const {
  std::ostringstream os;
  os << "curve,z0,t,z\n";
  for (std::size_t c = 0; c < values.size(); ++c) {
    for (std::size_t k = 0; k < times.size(); ++k) {
      os << c << ',' << format_double(starts[c]) << ',' << format_double(times[k]) << ','
         << format_double(values[c][k]) << '\n';
    }
  }
  return os.str();
}

CurveSet integrate_curves(const ScalarSystem& sys, const std::vector<double>& starts) {
  NoGradGuard no_grad;
  const auto field = sys.field;
  FunctionDynamics f(
      [field](const Tensor& z, double t) {
        return elementwise(z, [&field, t](double v) { return field(v, t); },
                           [](double) { return 0.0; });
      },
      false);
  OdeConfig cfg{sys.t_end, sys.step, Scheme::kRk4};
  const Trajectory traj = integrate(f, Tensor({starts.size()}, starts), cfg);
  CurveSet out;
  out.times = traj.times;
  out.starts = starts;
  out.values.assign(starts.size(), std::vector<double>(traj.states.size()));
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    for (std::size_t c = 0; c < starts.size(); ++c) out.values[c][k] = traj.states[k][c];
  }
  return out;
}

NonIntersectionReport non_intersection_check(const ScalarSystem& sys) {
  if (sys.starts.size() != 3 || !(sys.starts[0] < sys.starts[1] && sys.starts[1] < sys.starts[2])) {
    throw ConfigError(sys.name + ": need three strictly increasing starts");
  }
  if (!(sys.probe > sys.starts[0] && sys.probe < sys.starts[2])) {
    throw ConfigError(sys.name + ": probe start must lie strictly between the outer starts");
  }
  if (sys.step * sys.lipschitz > 0.01 * (1.0 + 1e-12)) {
    throw ConfigError(sys.name + ": step * C = " + format_double(sys.step * sys.lipschitz) +
                      " exceeds 0.01");
  }
  NonIntersectionReport r;
  r.step = sys.step;
  r.curves = integrate_curves(sys, {sys.starts[0], sys.starts[1], sys.starts[2], sys.probe});
  const auto& v = r.curves.values;
  r.min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < r.curves.times.size(); ++k) {
    const double lo = v[1][k] - v[0][k], hi = v[2][k] - v[1][k];
    r.min_gap = std::min({r.min_gap, lo, hi});
    if (r.ordered && !(lo > 0.0 && hi > 0.0)) {
      r.ordered = false;
      r.first_violation = k;
    }
  }
  const std::size_t last = r.curves.times.size() - 1;
  r.probe_gap = std::abs(v[3][last] - v[1][last]);
  r.outer_gap = std::abs(v[2][last] - v[0][last]);
  r.passed = r.ordered && r.probe_gap <= r.outer_gap;
  return r;
}

GronwallReport gronwall_check(const ScalarSystem& sys,
                              const std::vector<std::pair<double, double>>& pairs) {
  if (sys.step > 1e-3 * (1.0 + 1e-12)) {
    throw ConfigError(sys.name + ": Gronwall check needs step <= 1e-3");
  }
  if (pairs.empty()) throw ConfigError("gronwall_check needs at least one pair");
  std::vector<double> starts;
  for (const auto& [a, b] : pairs) {
    if (a == b) throw ConfigError(sys.name + ": Gronwall pair with identical starts");
    starts.push_back(a);
    starts.push_back(b);
  }
  const CurveSet curves = integrate_curves(sys, starts);
  GronwallReport r;
  r.step = sys.step;
  r.pairs = pairs.size();
  r.max_ratio = 0.0;
  r.min_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const double initial = std::abs(pairs[p].first - pairs[p].second);
    for (std::size_t k = 0; k < curves.times.size(); ++k) {
      const double gap = std::abs(curves.values[2 * p][k] - curves.values[2 * p + 1][k]);
      const double ratio = gap / (initial * std::exp(sys.lipschitz * curves.times[k]));
      if (ratio > r.max_ratio) {
        r.max_ratio = ratio;
        r.worst_time = curves.times[k];
      }
      r.min_ratio = std::min(r.min_ratio, ratio);
    }
  }
  r.passed = r.max_ratio <= 1.0 + 1e-6;
  return r;
}

std::vector<ScalarSystem> standard_systems() {
  std::vector<ScalarSystem> out;
  ScalarSystem growth;
  growth.name = "linear_growth";
  growth.field = [](double z, double) { return z; };
  growth.lipschitz = 1.0;
  growth.starts = {0.0, 1.0, 2.0};
  growth.probe = 1.5;
  growth.t_end = 1.0;
  out.push_back(growth);

  ScalarSystem sine;
  sine.name = "sine";
  sine.field = [](double z, double) { return std::sin(z); };
  sine.lipschitz = 1.0;
  sine.starts = {0.1, 0.5, 1.0};
  sine.probe = 0.3;
  sine.t_end = 5.0;
  out.push_back(sine);

  ScalarSystem decay;
  decay.name = "linear_decay";
  decay.field = [](double z, double) { return -z; };
  decay.lipschitz = 1.0;
  decay.starts = {-1.0, 0.0, 1.0};
  decay.probe = 0.5;
  decay.t_end = 1.0;
  out.push_back(decay);
  return out;
}

std::vector<ScalarSystem> random_monotone_systems(std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "monotone-systems"));
  std::uniform_real_distribution<double> amp(0.2, 2.0), slope(0.2, 2.0), offset(-1.0, 1.0),
      drive(0.0, 1.0), freq(0.5, 3.0), start(-2.0, 2.0);
  std::bernoulli_distribution flip(0.5);
  std::vector<ScalarSystem> out;
  for (std::size_t i = 0; i < count; ++i) {
    const double a = flip(rng) ? amp(rng) : -amp(rng);
    const double b = slope(rng), c = offset(rng), d = drive(rng), w = freq(rng);
    ScalarSystem s;
    s.name = "monotone_" + std::to_string(i);
    s.field = [a, b, c, d, w](double z, double t) { return a * std::tanh(b * z + c) + d * std::sin(w * t); };
    s.lipschitz = std::abs(a * b);
    std::vector<double> z{start(rng), start(rng), start(rng)};
    std::sort(z.begin(), z.end());
    if (z[1] - z[0] < 1e-3) z[1] = z[0] + 1e-3;
    if (z[2] - z[1] < 1e-3) z[2] = z[1] + 1e-3;
    s.starts = z;
    s.probe = 0.5 * (z[0] + z[2]) + 0.25 * (z[1] - 0.5 * (z[0] + z[2]));
    s.t_end = 2.0;
    // step * C <= 0.01 and step <= 1e-3
    s.step = 1e-3;
    while (s.step * s.lipschitz > 0.01) s.step /= 2.0;
    out.push_back(std::move(s));
  }
  return out;
}

ScalarSystem halved_step(const ScalarSystem& sys) {
  ScalarSystem s = sys;
  s.step = sys.step / 2.0;
  return s;
}

FlowAudit trained_model_flow_audit(const Model& model, const Tensor& inputs, std::size_t probes,
                                   const std::vector<double>& deltas, std::uint64_t seed) {
  if (!model.has_ode()) throw UsageError("flow audit needs a node or tisode model");
  if (probes == 0 || deltas.empty()) throw ConfigError("flow audit needs probes and deltas");
  NoGradGuard no_grad;
  const std::size_t n = inputs.dim(0);
  std::vector<std::size_t> pick(probes);
  for (std::size_t p = 0; p < probes; ++p) pick[p] = p % n;
  const Tensor z0 = model.extract_features(gather_batch(inputs, pick));
  const Tensor base = model.map_representation(z0);
  const std::size_t stride = z0.numel() / probes;

  // One unit direction per probe, shared by every δ so the δ sweep is paired.
  Rng rng(derive_seed(seed, "flow-audit"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> dir(z0.numel());
  for (std::size_t p = 0; p < probes; ++p) {
    double norm = 0.0;
    for (std::size_t i = 0; i < stride; ++i) {
      dir[p * stride + i] = normal(rng);
      norm += dir[p * stride + i] * dir[p * stride + i];
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < stride; ++i) dir[p * stride + i] /= norm;
  }

  FlowAudit audit;
  audit.deltas = deltas;
  for (double delta : deltas) {
    std::vector<double> shifted(z0.data().begin(), z0.data().end());
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += delta * dir[i];
    const Tensor moved = model.map_representation(Tensor(z0.shape(), std::move(shifted)));
    std::vector<double> amp(probes);
    for (std::size_t p = 0; p < probes; ++p) {
      double out = 0.0, in = 0.0;
      for (std::size_t i = 0; i < stride; ++i) {
        const double d = moved[p * stride + i] - base[p * stride + i];
        out += d * d;
        const double u = (z0[p * stride + i] + delta * dir[p * stride + i]) - z0[p * stride + i];
        in += u * u;
      }
      amp[p] = std::sqrt(out) / std::sqrt(in);
    }
    std::vector<double> sorted = amp;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    audit.median_amplification.push_back(m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]));
    audit.amplification.push_back(std::move(amp));
  }
  if (model.kind() == RmKind::kTisode) {
    const auto gaps = steady_state_gap(model, inputs);
    double s = 0.0;
    for (double g : gaps) s += g;
    audit.mean_steady_gap = s / static_cast<double>(gaps.size());
  }
  return audit;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

std::string check_results_csv(const std::vector<CheckResult>& results) {
  std::ostringstream os;
  os << "suite,name,passed,metric,value,detail\n";
  for (const auto& r : results) {
    os << r.suite << ',' << r.name << ',' << (r.passed ? 1 : 0) << ',' << r.metric << ','
       << format_double(r.value) << ',' << csv_field(r.detail) << '\n';
  }
  return os.str();
}

}  // namespace nodebench
