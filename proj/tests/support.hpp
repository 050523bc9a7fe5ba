#pragma once

// Independent reference implementations and checking helpers shared by the
// unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nodebench/ops.hpp"
#include "nodebench/rng.hpp"
#include "nodebench/tape.hpp"
#include "nodebench/tensor.hpp"

namespace nodebench::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Direct cross-correlation with explicit loops over n, o, y, x, c, ky, kx.
inline std::vector<double> conv2d_reference(const Tensor& in, const Tensor& w, const Tensor& b,
                                            std::size_t stride, std::size_t pad) {
  const auto N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const auto O = w.dim(0), K = w.dim(2);
  const auto Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  std::vector<double> out(N * O * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t x = 0; x < Wo; ++x) {
          double acc = b.defined() ? b[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += in[((n * C + c) * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] *
                       w[((o * C + c) * K + ky) * K + kx];
              }
          out[((n * O + o) * Ho + y) * Wo + x] = acc;
        }
  return out;
}

/// Mean over rows of logsumexp(row) - row[label].
inline double cross_entropy_reference(const Tensor& logits, const std::vector<int>& labels) {
  const auto n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits[i * k];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, logits[i * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(logits[i * k + j] - m);
    total += m + std::log(s) - logits[i * k + static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(n);
}

struct FdResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_relative = 0.0;
  std::string worst;
};

inline bool fd_agrees(double analytic, double numeric, double rtol = 1e-4, double atol = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  return diff <= atol || diff <= rtol * std::max(std::abs(analytic), std::abs(numeric));
}

/// Compares reverse-mode gradients of `loss_fn` with central differences on
/// `coords` coordinates: one from every tensor first, the rest uniformly over
/// tensors then positions.
inline FdResult fd_check(const std::function<Tensor()>& loss_fn,
                         std::vector<std::pair<std::string, Tensor>> params, std::size_t coords,
                         std::uint64_t seed, double step = 1e-5, double rtol = 1e-4,
                         double atol = 1e-7) {
  for (auto& [name, p] : params) p.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) analytic.push_back(p.grad());

  std::mt19937_64 rng(seed);
  FdResult r;
  for (std::size_t c = 0; c < coords; ++c) {
    const std::size_t t = c < params.size() ? c : std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
    Tensor& p = params[t].second;
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p.numel() - 1)(rng);
    const double saved = p[i];
    double plus, minus;
    {
      NoGradGuard guard;
      p.mutable_data()[i] = saved + step;
      plus = loss_fn().item();
      p.mutable_data()[i] = saved - step;
      minus = loss_fn().item();
      p.mutable_data()[i] = saved;
    }
    const double numeric = (plus - minus) / (2.0 * step);
    const double a = analytic[t][i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-300});
    ++r.checked;
    if (!fd_agrees(a, numeric, rtol, atol)) {
      ++r.failures;
      if (rel > r.worst_relative) {
        r.worst_relative = rel;
        r.worst = params[t].first + "[" + std::to_string(i) + "] analytic " + std::to_string(a) +
                  " numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace nodebench::testing
