#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nodebench/models.hpp"
#include "nodebench/tensor.hpp"

namespace nodebench {

/// A closed-form scalar field dz/dt = f(z, t) with a claimed Lipschitz
/// constant in z over [domain_lo, domain_hi].
struct ScalarSystem {
  std::string name;
  std::function<double(double z, double t)> field;
  double lipschitz = 1.0;
  /// Three strictly increasing starting points: lower, middle, upper.
  std::vector<double> starts;
  /// Start strictly between lower and upper used for the sandwich bound.
  double probe = 0.0;
  double t_end = 1.0;
  double step = 1e-3;
  double domain_lo = -10.0;
  double domain_hi = 10.0;
};

/// Largest |f(a,t) - f(b,t)| / |a - b| over `samples` seeded random pairs.
double observed_lipschitz(const ScalarSystem& sys, std::size_t samples, std::uint64_t seed);

/// Integral curves of a scalar system on the solver grid (RK4).
struct CurveSet {
  std::vector<double> times;
  std::vector<double> starts;
  std::vector<std::vector<double>> values;  // [curve][k]

  /// Plot-ready long format: curve,z0,t,z.
  std::string csv() const;
};

CurveSet integrate_curves(const ScalarSystem& sys, const std::vector<double>& starts);

struct NonIntersectionReport {
  bool passed = false;
  double step = 0.0;
  std::size_t first_violation = 0;  // grid index; meaningful when !ordered
  bool ordered = true;
  double min_gap = 0.0;   // smallest gap between neighbouring curves on the grid
  double probe_gap = 0.0; // |probe(T) - middle(T)|
  double outer_gap = 0.0; // |upper(T) - lower(T)|
  CurveSet curves;        // lower, middle, upper, probe
};

/// Strict ordering lower < middle < upper at every grid point plus the
/// sandwich bound |probe(T) - middle(T)| <= |upper(T) - lower(T)|.
/// ConfigError unless step * lipschitz <= 0.01 and the starts are ordered.
NonIntersectionReport non_intersection_check(const ScalarSystem& sys);

struct GronwallReport {
  bool passed = false;
  double step = 0.0;
  double max_ratio = 0.0;  // measured gap / bound, worst over pairs and times
  double min_ratio = 0.0;
  double worst_time = 0.0;
  std::size_t pairs = 0;
};

/// |z1(t_k) - z2(t_k)| <= |x1 - x2| e^{C t_k} (1 + 1e-6) for every pair and
/// grid point. ConfigError unless step <= 1e-3.
GronwallReport gronwall_check(const ScalarSystem& sys,
                              const std::vector<std::pair<double, double>>& pairs);

/// f(z)=z, f(z)=sin z and f(z)=-z with their documented starts.
std::vector<ScalarSystem> standard_systems();
/// Seeded fields a·tanh(b·z + c) + d·sin(ω t) with C = |a·b|, step set so
/// that step·C <= 0.01.
std::vector<ScalarSystem> random_monotone_systems(std::size_t count, std::uint64_t seed);
/// Same system with the step halved (and nothing else changed).
ScalarSystem halved_step(const ScalarSystem& sys);

struct FlowAudit {
  std::vector<double> deltas;
  std::vector<std::vector<double>> amplification;  // [delta][probe]
  std::vector<double> median_amplification;        // per delta
  double mean_steady_gap = -1.0;                   // tisode only; -1 otherwise
};

/// For random feature-space directions of norm δ, the ratio
/// ||RM(z + u) - RM(z)|| / ||u||. `inputs` are normalized model inputs.
FlowAudit trained_model_flow_audit(const Model& model, const Tensor& inputs, std::size_t probes,
                                   const std::vector<double>& deltas, std::uint64_t seed);

/// One line of the property-suite metrics CSV.
struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string metric;
  double value = 0.0;
  std::string detail;
};

std::string check_results_csv(const std::vector<CheckResult>& results);

}  // namespace nodebench
