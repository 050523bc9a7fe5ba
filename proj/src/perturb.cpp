#include "nodebench/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nodebench/ops.hpp"
#include "nodebench/rng.hpp"
#include "nodebench/tape.hpp"
#include "nodebench/text.hpp"

namespace nodebench {

std::string to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::kGaussian: return "gaussian";
    case PerturbationKind::kFgsm: return "fgsm";
    case PerturbationKind::kPgd: return "pgd";
  }
  return "unknown";
}

PerturbationSpec PerturbationSpec::gaussian(double sigma, bool clip) {
  PerturbationSpec s;
  s.kind = PerturbationKind::kGaussian;
  s.magnitude = sigma;
  s.steps = 0;
  s.random_start = false;
  s.clip_to_valid_range = clip;
  s.validate();
  return s;
}

PerturbationSpec PerturbationSpec::fgsm(double epsilon) {
  PerturbationSpec s;
  s.kind = PerturbationKind::kFgsm;
  s.magnitude = epsilon;
  s.steps = 1;
  s.step_size = epsilon;
  s.random_start = false;
  s.clip_to_valid_range = true;
  s.validate();
  return s;
}

PerturbationSpec PerturbationSpec::pgd(double epsilon, std::size_t steps, double step_size,
                                       bool random_start) {
  PerturbationSpec s;
  s.kind = PerturbationKind::kPgd;
  s.magnitude = epsilon;
  s.steps = steps;
  s.step_size = step_size > 0.0 ? step_size : epsilon / 10.0;
  s.random_start = random_start;
  s.clip_to_valid_range = true;
  s.validate();
  return s;
}

void PerturbationSpec::validate() const {
  if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) {
    throw ConfigError("perturbation magnitude must be a finite nonnegative number");
  }
  if (kind == PerturbationKind::kPgd) {
    if (steps == 0) throw ConfigError("pgd needs at least one step");
    if (magnitude > 0.0 && !(effective_step_size() > 0.0)) {
      throw ConfigError("pgd step size must be positive");
    }
  }
}

std::string PerturbationSpec::to_string() const {
  const std::string m = format_double(magnitude);
  switch (kind) {
    case PerturbationKind::kGaussian:
      return "gaussian(" + m + (clip_to_valid_range ? ",clip" : "") + ")";
    case PerturbationKind::kFgsm:
      return "fgsm(" + m + ")";
    case PerturbationKind::kPgd:
      return "pgd(" + m + "," + std::to_string(steps) + "," + format_double(effective_step_size()) +
             "," + (random_start ? "rand" : "norand") + ")";
  }
  return "unknown";
}

std::string PerturbationSpec::label() const {
  const std::string m = format_double(magnitude);
  switch (kind) {
    case PerturbationKind::kGaussian: return "sigma=" + m;
    case PerturbationKind::kFgsm: return "FGSM-" + m;
    case PerturbationKind::kPgd: return "PGD-" + m;
  }
  return m;
}

PerturbationSpec PerturbationSpec::parse(const std::string& text) {
  const std::string t = trim(text);
  const auto open = t.find('(');
  if (open == std::string::npos || t.back() != ')') {
    throw ConfigError("perturbation '" + t + "' is not of the form kind(args)");
  }
  const std::string kind = trim(t.substr(0, open));
  const auto args = split(t.substr(open + 1, t.size() - open - 2), ',');
  if (args.empty() || args[0].empty()) throw ConfigError("perturbation '" + t + "' has no magnitude");
  const double magnitude = parse_double(args[0], "perturbation magnitude");
  if (kind == "gaussian") {
    if (args.size() > 2) throw ConfigError("gaussian takes (sigma[,clip])");
    const bool clip = args.size() == 2 && (args[1] == "clip" || parse_bool(args[1], "gaussian clip"));
    return gaussian(magnitude, clip);
  }
  if (kind == "fgsm") {
    if (args.size() != 1) throw ConfigError("fgsm takes (epsilon)");
    return fgsm(magnitude);
  }
  if (kind == "pgd") {
    if (args.size() > 4) throw ConfigError("pgd takes (epsilon[,steps[,step_size[,rand|norand]]])");
    const std::size_t steps = args.size() > 1 ? parse_unsigned(args[1], "pgd steps") : 40;
    const double step = args.size() > 2 ? parse_double(args[2], "pgd step size") : 0.0;
    bool random_start = true;
    if (args.size() > 3) {
      if (args[3] == "rand") random_start = true;
      else if (args[3] == "norand") random_start = false;
      else random_start = parse_bool(args[3], "pgd random start");
    }
    return pgd(magnitude, steps, step, random_start);
  }
  throw ConfigError("unknown perturbation kind '" + kind + "'");
}

// -- generators -----------------------------------------------------------------

Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  FrozenParameters frozen(model);
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tensor loss = softmax_cross_entropy(model.forward(probe), labels, Reduction::kSum);
  if (!loss.requires_grad()) {
    // Nothing on the path depends on the input: the gradient is identically 0.
    Tape::active().clear();
    return Tensor(x.shape(), 0.0);
  }
  backward(loss);
  return Tensor(x.shape(), probe.grad());
}

Tensor gaussian_perturb(const Tensor& raw, double sigma, std::uint64_t seed, bool clip) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("gaussian sigma must be >= 0");
  Rng rng(derive_seed(seed, "noise"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(raw.numel());
  const auto x = raw.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    double y = x[i] + sigma * normal(rng);
    if (clip) y = std::clamp(y, 0.0, 255.0);
    v[i] = y;
  }
  return Tensor(raw.shape(), std::move(v));
}

namespace {

double sign(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

}  // namespace

Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, double epsilon,
            const Normalization& norm) {
  if (!(epsilon >= 0.0)) throw ConfigError("fgsm epsilon must be >= 0");
  const double budget = epsilon * (norm.upper() - norm.lower());
  const Tensor grad = input_gradient(model, x, labels);
  std::vector<double> v(x.numel());
  const auto in = x.data();
  const auto g = grad.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::clamp(in[i] + budget * sign(g[i]), norm.lower(), norm.upper());
  }
  return Tensor(x.shape(), std::move(v));
}

Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> labels, double epsilon,
           std::size_t steps, double step_size, bool random_start, std::uint64_t seed,
           const Normalization& norm) {
  if (!(epsilon >= 0.0)) throw ConfigError("pgd epsilon must be >= 0");
  if (steps == 0) throw ConfigError("pgd needs at least one step");
  const double range = norm.upper() - norm.lower();
  const double budget = epsilon * range;
  const double alpha = step_size * range;
  const auto origin = x.data();
  std::vector<double> current(origin.begin(), origin.end());
  if (random_start && budget > 0.0) {
    Rng rng(derive_seed(seed, "attack"));
    std::uniform_real_distribution<double> start(-budget, budget);
    for (auto& c : current) c = std::clamp(c + start(rng), norm.lower(), norm.upper());
  }
  for (std::size_t j = 0; j < steps; ++j) {
    const Tensor grad = input_gradient(model, Tensor(x.shape(), current), labels);
    const auto g = grad.data();
    for (std::size_t i = 0; i < current.size(); ++i) {
      const double moved = std::clamp(current[i] + alpha * sign(g[i]), origin[i] - budget,
                                      origin[i] + budget);
      current[i] = std::clamp(moved, norm.lower(), norm.upper());
    }
  }
  return Tensor(x.shape(), std::move(current));
}

Tensor perturb_inputs(const Classifier& model, const Tensor& raw, std::span<const int> labels,
                      const PerturbationSpec& spec, const Normalization& norm, std::uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case PerturbationKind::kGaussian:
      return norm.apply(gaussian_perturb(raw, spec.magnitude, seed, spec.clip_to_valid_range));
    case PerturbationKind::kFgsm:
      return fgsm(model, norm.apply(raw), labels, spec.magnitude, norm);
    case PerturbationKind::kPgd:
      return pgd(model, norm.apply(raw), labels, spec.magnitude, spec.steps,
                 spec.effective_step_size(), spec.random_start, seed, norm);
  }
  throw UsageError("unreachable perturbation kind");
}

}  // namespace nodebench
