#include "nodebench/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "nodebench/tape.hpp"

namespace nodebench {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

Tensor make_output(Shape shape, std::vector<double> values, const char* op) {
  ensure_finite(values, op);
  return Tensor(std::move(shape), std::move(values));
}

void record(Tensor& out, Tape::Adjoint adjoint) {
  out.set_requires_grad(true);
  Tape::active().record(out, std::move(adjoint));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.ndim() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + to_string(t.shape()));
  }
}

}  // namespace

// -- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> v(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + y[i];
  Tensor out = make_output(a.shape(), std::move(v), "add");
  if (tracking({&a, &b})) {
    record(out, [a, b](std::span<const double> g) mutable {
      if (wants_grad(a)) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> v(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] - y[i];
  Tensor out = make_output(a.shape(), std::move(v), "sub");
  if (tracking({&a, &b})) {
    record(out, [a, b](std::span<const double> g) mutable {
      if (wants_grad(a)) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * y[i];
  Tensor out = make_output(a.shape(), std::move(v), "mul");
  if (tracking({&a, &b})) {
    record(out, [a, b](std::span<const double> g) mutable {
      const auto x = a.data();
      const auto y = b.data();
      if (wants_grad(a)) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> v(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * factor;
  Tensor out = make_output(a.shape(), std::move(v), "scale");
  if (tracking({&a})) {
    record(out, [a, factor](std::span<const double> g) mutable {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor abs(const Tensor& a) {
  std::vector<double> v(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(x[i]);
  Tensor out = make_output(a.shape(), std::move(v), "abs");
  if (tracking({&a})) {
    record(out, [a](std::span<const double> g) mutable {
      const auto x = a.data();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) {
          ga[i] += g[i];
        } else if (x[i] < 0.0) {
          ga[i] -= g[i];
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  std::vector<double> v(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > 0.0 ? x[i] : 0.0;
  Tensor out = make_output(a.shape(), std::move(v), "relu");
  if (tracking({&a})) {
    record(out, [a](std::span<const double> g) mutable {
      const auto x = a.data();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) ga[i] += g[i];
      }
    });
  }
  return out;
}

Tensor elementwise(const Tensor& a, const std::function<double(double)>& value,
                   const std::function<double(double)>& derivative) {
  std::vector<double> v(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = value(x[i]);
  Tensor out = make_output(a.shape(), std::move(v), "elementwise");
  if (tracking({&a})) {
    record(out, [a, derivative](std::span<const double> g) mutable {
      const auto x = a.data();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * derivative(x[i]);
    });
  }
  return out;
}

// -- reductions and reshaping -----------------------------------------------

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  Tensor out = make_output({1}, {total}, "sum");
  if (tracking({&a})) {
    record(out, [a](std::span<const double> g) mutable {
      auto ga = a.grad_buffer();
      for (auto& x : ga) x += g[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  const double n = static_cast<double>(a.numel());
  Tensor out = make_output({1}, {total / n}, "mean");
  if (tracking({&a})) {
    record(out, [a, n](std::span<const double> g) mutable {
      auto ga = a.grad_buffer();
      const double share = g[0] / n;
      for (auto& x : ga) x += share;
    });
  }
  return out;
}

Tensor sample_l2_norm(const Tensor& a) {
  if (a.ndim() < 1) throw ShapeError("sample_l2_norm: tensor has no leading axis");
  const std::size_t n = a.dim(0);
  const std::size_t stride = a.numel() / n;
  const auto x = a.data();
  std::vector<double> norms(n);
  for (std::size_t s = 0; s < n; ++s) {
    double sq = 0.0;
    for (std::size_t i = 0; i < stride; ++i) sq += x[s * stride + i] * x[s * stride + i];
    norms[s] = std::sqrt(sq);
  }
  Tensor out = make_output({n}, norms, "sample_l2_norm");
  if (tracking({&a})) {
    record(out, [a, norms, stride](std::span<const double> g) mutable {
      const auto x = a.data();
      auto ga = a.grad_buffer();
      for (std::size_t s = 0; s < norms.size(); ++s) {
        if (norms[s] == 0.0) continue;
        const double k = g[s] / norms[s];
        for (std::size_t i = 0; i < stride; ++i) ga[s * stride + i] += k * x[s * stride + i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (tracking({&a})) {
    record(out, [a](std::span<const double> g) mutable {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor flatten(const Tensor& a) {
  if (a.ndim() < 1) throw ShapeError("flatten: tensor has no leading axis");
  return reshape(a, {a.dim(0), a.numel() / a.dim(0)});
}

Tensor channel_concat(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "channel_concat", "first operand");
  require_rank(b, 4, "channel_concat", "second operand");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ShapeError("channel_concat: incompatible shapes " + to_string(sa) + " and " +
                     to_string(sb));
  }
  const std::size_t n = sa[0];
  const std::size_t plane = sa[2] * sa[3];
  const std::size_t block_a = sa[1] * plane;
  const std::size_t block_b = sb[1] * plane;
  std::vector<double> v(n * (block_a + block_b));
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(x.begin() + s * block_a, block_a, v.begin() + s * (block_a + block_b));
    std::copy_n(y.begin() + s * block_b, block_b, v.begin() + s * (block_a + block_b) + block_a);
  }
  Tensor out = make_output({n, sa[1] + sb[1], sa[2], sa[3]}, std::move(v), "channel_concat");
  if (tracking({&a, &b})) {
    record(out, [a, b, n, block_a, block_b](std::span<const double> g) mutable {
      const std::size_t row = block_a + block_b;
      if (wants_grad(a)) {
        auto ga = a.grad_buffer();
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t i = 0; i < block_a; ++i) ga[s * block_a + i] += g[s * row + i];
        }
      }
      if (wants_grad(b)) {
        auto gb = b.grad_buffer();
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t i = 0; i < block_b; ++i) gb[s * block_b + i] += g[s * row + block_a + i];
        }
      }
    });
  }
  return out;
}

// -- convolution --------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, oh, ow;
  std::size_t patch() const { return c * k * k; }
  std::size_t pixels() const { return oh * ow; }
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t i = 0; i < g.k; ++i) {
      for (std::size_t j = 0; j < g.k; ++j) {
        double* row = cols + ((ch * g.k + i) * g.k + j) * g.pixels();
        for (std::size_t y = 0; y < g.oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + i) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t xo = 0; xo < g.ow; ++xo) {
            const auto ix = static_cast<std::ptrdiff_t>(xo * g.stride + j) -
                            static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[y * g.ow + xo] =
                inside ? x[(ch * g.h + static_cast<std::size_t>(iy)) * g.w +
                           static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t i = 0; i < g.k; ++i) {
      for (std::size_t j = 0; j < g.k; ++j) {
        const double* row = cols + ((ch * g.k + i) * g.k + j) * g.pixels();
        for (std::size_t y = 0; y < g.oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride + i) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t xo = 0; xo < g.ow; ++xo) {
            const auto ix = static_cast<std::ptrdiff_t>(xo * g.stride + j) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(ch * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                row[y * g.ow + xo];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  if (ws[1] != xs[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels but weight " +
                     to_string(ws) + " expects " + std::to_string(ws[1]));
  }
  if (ws[2] != ws[3]) throw ShapeError("conv2d: kernel must be square, got " + to_string(ws));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != ws[0])) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match " +
                     std::to_string(ws[0]) + " output channels");
  }
  const std::size_t k = ws[2];
  if (xs[2] + 2 * padding < k || xs[3] + 2 * padding < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                     to_string(xs));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], k, stride, padding,
                 (xs[2] + 2 * padding - k) / stride + 1, (xs[3] + 2 * padding - k) / stride + 1};

  Tensor out({g.n, g.o, g.oh, g.ow});
  const std::span<double> v = out.mutable_data();
  detail::Buffer cols(g.patch() * g.pixels());
  ConstMatrixMap w(weight.data().data(), static_cast<Eigen::Index>(g.o),
                   static_cast<Eigen::Index>(g.patch()));
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(input.data().data() + s * g.c * g.h * g.w, g, cols.data());
    ConstMatrixMap c(cols.data(), static_cast<Eigen::Index>(g.patch()),
                     static_cast<Eigen::Index>(g.pixels()));
    MatrixMap y(v.data() + s * g.o * g.pixels(), static_cast<Eigen::Index>(g.o),
                static_cast<Eigen::Index>(g.pixels()));
    y.noalias() = w * c;
    if (bias.defined()) {
      const auto b = bias.data();
      for (std::size_t oc = 0; oc < g.o; ++oc) y.row(static_cast<Eigen::Index>(oc)).array() += b[oc];
    }
  }
  ensure_finite(v, "conv2d");
  if (tracking({&input, &weight, &bias})) {
    record(out, [input, weight, bias, g](std::span<const double> grad) mutable {
      detail::Buffer cols(g.patch() * g.pixels());
      ConstMatrixMap w(weight.data().data(), static_cast<Eigen::Index>(g.o),
                       static_cast<Eigen::Index>(g.patch()));
      const bool dx_on = wants_grad(input);
      const bool dw_on = wants_grad(weight);
      const bool db_on = wants_grad(bias);
      std::span<double> dx = dx_on ? input.grad_buffer() : std::span<double>{};
      std::span<double> dw = dw_on ? weight.grad_buffer() : std::span<double>{};
      std::span<double> db = db_on ? bias.grad_buffer() : std::span<double>{};
      for (std::size_t s = 0; s < g.n; ++s) {
        ConstMatrixMap dy(grad.data() + s * g.o * g.pixels(), static_cast<Eigen::Index>(g.o),
                          static_cast<Eigen::Index>(g.pixels()));
        if (db_on) {
          for (std::size_t oc = 0; oc < g.o; ++oc) db[oc] += dy.row(static_cast<Eigen::Index>(oc)).sum();
        }
        if (dw_on) {
          im2col(input.data().data() + s * g.c * g.h * g.w, g, cols.data());
          ConstMatrixMap c(cols.data(), static_cast<Eigen::Index>(g.patch()),
                           static_cast<Eigen::Index>(g.pixels()));
          MatrixMap dwm(dw.data(), static_cast<Eigen::Index>(g.o),
                        static_cast<Eigen::Index>(g.patch()));
          dwm.noalias() += dy * c.transpose();
        }
        if (dx_on) {
          MatrixMap dc(cols.data(), static_cast<Eigen::Index>(g.patch()),
                       static_cast<Eigen::Index>(g.pixels()));
          dc.noalias() = w.transpose() * dy;
          col2im_add(cols.data(), g, dx.data() + s * g.c * g.h * g.w);
        }
      }
    });
  }
  return out;
}

// -- normalization ----------------------------------------------------------

Tensor group_norm(const Tensor& x, std::size_t groups, double eps, const Tensor& scale,
                  const Tensor& shift) {
  require_rank(x, 4, "group_norm", "input");
  const auto& xs = x.shape();
  const std::size_t n = xs[0], c = xs[1], plane = xs[2] * xs[3];
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(c) + " channels are not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (scale.numel() != c || shift.numel() != c) {
    throw ShapeError("group_norm: scale/shift must have " + std::to_string(c) + " entries");
  }
  const std::size_t per_group = c / groups;
  const std::size_t m = per_group * plane;
  const auto in = x.data();
  const auto gamma = scale.data();
  const auto beta = shift.data();
  std::vector<double> v(x.numel());
  std::vector<double> rstd(n * groups);
  std::vector<double> mu(n * groups);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (s * c + gi * per_group) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += in[base + i];
      const double mean_value = acc / static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = in[base + i] - mean_value;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double r = 1.0 / std::sqrt(var + eps);
      mu[s * groups + gi] = mean_value;
      rstd[s * groups + gi] = r;
      for (std::size_t cc = 0; cc < per_group; ++cc) {
        const std::size_t ch = gi * per_group + cc;
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t idx = base + cc * plane + p;
          v[idx] = (in[idx] - mean_value) * r * gamma[ch] + beta[ch];
        }
      }
    }
  }
  Tensor out = make_output(xs, std::move(v), "group_norm");
  if (tracking({&x, &scale, &shift})) {
    record(out, [x, scale, shift, groups, mu, rstd, n, c, plane, per_group,
                 m](std::span<const double> g) mutable {
      const auto in = x.data();
      const auto gamma = scale.data();
      const bool dx_on = wants_grad(x);
      std::span<double> dx = dx_on ? x.grad_buffer() : std::span<double>{};
      std::span<double> dgamma = wants_grad(scale) ? scale.grad_buffer() : std::span<double>{};
      std::span<double> dbeta = wants_grad(shift) ? shift.grad_buffer() : std::span<double>{};
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t base = (s * c + gi * per_group) * plane;
          const double mean_value = mu[s * groups + gi];
          const double r = rstd[s * groups + gi];
          double sum_dxhat = 0.0;
          double sum_dxhat_xhat = 0.0;
          for (std::size_t cc = 0; cc < per_group; ++cc) {
            const std::size_t ch = gi * per_group + cc;
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t idx = base + cc * plane + p;
              const double xhat = (in[idx] - mean_value) * r;
              if (!dgamma.empty()) dgamma[ch] += g[idx] * xhat;
              if (!dbeta.empty()) dbeta[ch] += g[idx];
              const double dxhat = g[idx] * gamma[ch];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
          }
          if (!dx_on) continue;
          for (std::size_t cc = 0; cc < per_group; ++cc) {
            const std::size_t ch = gi * per_group + cc;
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t idx = base + cc * plane + p;
              const double xhat = (in[idx] - mean_value) * r;
              const double dxhat = g[idx] * gamma[ch];
              dx[idx] += r * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
            }
          }
        }
      }
    });
  }
  return out;
}

// -- dense ------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const std::size_t n = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " +
                     to_string(weight.shape()));
  }
  if (bias.defined() && bias.numel() != outf) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match " +
                     std::to_string(outf) + " outputs");
  }
  Tensor out({n, outf});
  const std::span<double> v = out.mutable_data();
  ConstMatrixMap xm(x.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
  ConstMatrixMap wm(weight.data().data(), static_cast<Eigen::Index>(outf),
                    static_cast<Eigen::Index>(in));
  MatrixMap ym(v.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(outf));
  // Row by row so a sample's logits do not depend on what else is in the batch.
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(n); ++s) {
    ym.row(s).noalias() = xm.row(s) * wm.transpose();
  }
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < outf; ++j) v[s * outf + j] += b[j];
    }
  }
  ensure_finite(v, "linear");
  if (tracking({&x, &weight, &bias})) {
    record(out, [x, weight, bias, n, in, outf](std::span<const double> g) mutable {
      ConstMatrixMap dy(g.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(outf));
      if (wants_grad(x)) {
        ConstMatrixMap wm(weight.data().data(), static_cast<Eigen::Index>(outf),
                          static_cast<Eigen::Index>(in));
        MatrixMap dx(x.grad_buffer().data(), static_cast<Eigen::Index>(n),
                     static_cast<Eigen::Index>(in));
        dx.noalias() += dy * wm;
      }
      if (wants_grad(weight)) {
        ConstMatrixMap xm(x.data().data(), static_cast<Eigen::Index>(n),
                          static_cast<Eigen::Index>(in));
        MatrixMap dw(weight.grad_buffer().data(), static_cast<Eigen::Index>(outf),
                     static_cast<Eigen::Index>(in));
        dw.noalias() += dy.transpose() * xm;
      }
      if (wants_grad(bias)) {
        auto db = bias.grad_buffer();
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t j = 0; j < outf; ++j) db[j] += g[s * outf + j];
        }
      }
    });
  }
  return out;
}

// -- pooling ----------------------------------------------------------------

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 4, "max_pool2d", "input");
  if (kernel == 0 || stride == 0) throw ConfigError("max_pool2d: kernel and stride must be positive");
  const auto& xs = x.shape();
  if (xs[2] < kernel || xs[3] < kernel) {
    throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " exceeds input " +
                     to_string(xs));
  }
  const std::size_t oh = (xs[2] - kernel) / stride + 1;
  const std::size_t ow = (xs[3] - kernel) / stride + 1;
  const std::size_t planes = xs[0] * xs[1];
  const auto in = x.data();
  std::vector<double> v(planes * oh * ow);
  std::vector<std::size_t> argmax(v.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * xs[2] * xs[3];
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t i = 0; i < kernel; ++i) {
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = base + (y * stride + i) * xs[3] + xo * stride + j;
            if (in[idx] > best) {
              best = in[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (p * oh + y) * ow + xo;
        v[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  Tensor out = make_output({xs[0], xs[1], oh, ow}, std::move(v), "max_pool2d");
  if (tracking({&x})) {
    record(out, [x, argmax](std::span<const double> g) mutable {
      auto dx = x.grad_buffer();
      for (std::size_t o = 0; o < g.size(); ++o) dx[argmax[o]] += g[o];
    });
  }
  return out;
}

Tensor adaptive_avg_pool2d(const Tensor& x) {
  require_rank(x, 4, "adaptive_avg_pool2d", "input");
  const auto& xs = x.shape();
  const std::size_t planes = xs[0] * xs[1];
  const std::size_t area = xs[2] * xs[3];
  const auto in = x.data();
  std::vector<double> v(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) acc += in[p * area + i];
    v[p] = acc / static_cast<double>(area);
  }
  Tensor out = make_output({xs[0], xs[1], 1, 1}, std::move(v), "adaptive_avg_pool2d");
  if (tracking({&x})) {
    record(out, [x, area](std::span<const double> g) mutable {
      auto dx = x.grad_buffer();
      const double inv = 1.0 / static_cast<double>(area);
      for (std::size_t p = 0; p < g.size(); ++p) {
        const double share = g[p] * inv;
        for (std::size_t i = 0; i < area; ++i) dx[p * area + i] += share;
      }
    });
  }
  return out;
}

// -- loss -------------------------------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Reduction reduction) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= k) {
      throw InputError("softmax_cross_entropy: label " + std::to_string(labels[s]) + " at row " +
                       std::to_string(s) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto z = logits.data();
  std::vector<double> prob(n * k);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double* row = z.data() + s * k;
    const double peak = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - peak);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) prob[s * k + j] = std::exp(row[j] - peak - log_denom);
    total += log_denom - (row[static_cast<std::size_t>(labels[s])] - peak);
  }
  const double factor = reduction == Reduction::kMean ? 1.0 / static_cast<double>(n) : 1.0;
  Tensor out = make_output({1}, {total * factor}, "softmax_cross_entropy");
  if (tracking({&logits})) {
    std::vector<int> targets(labels.begin(), labels.end());
    record(out, [logits, prob, targets, factor, k](std::span<const double> g) mutable {
      auto dz = logits.grad_buffer();
      const double w = g[0] * factor;
      for (std::size_t s = 0; s < targets.size(); ++s) {
        for (std::size_t j = 0; j < k; ++j) {
          const double onehot = static_cast<int>(j) == targets[s] ? 1.0 : 0.0;
          dz[s * k + j] += w * (prob[s * k + j] - onehot);
        }
      }
    });
  }
  return out;
}

// -- helpers ----------------------------------------------------------------

std::vector<int> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto z = logits.data();
  std::vector<int> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double* row = z.data() + s * k;
    out[s] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_batch: nothing to concatenate");
  Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  std::size_t rows = 0;
  std::vector<double> v;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      throw ShapeError("concat_batch: trailing extents differ: " + to_string(p.shape()));
    }
    rows += p.dim(0);
    v.insert(v.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor(std::move(shape), std::move(v));
}

Tensor gather_batch(const Tensor& a, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("gather_batch: empty index list");
  const std::size_t n = a.dim(0);
  const std::size_t stride = a.numel() / n;
  std::vector<double> v(indices.size() * stride);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) {
      throw InputError("gather_batch: row " + std::to_string(indices[r]) + " out of range " +
                       std::to_string(n));
    }
    std::copy_n(a.data().begin() + indices[r] * stride, stride, v.begin() + r * stride);
  }
  Shape shape = a.shape();
  shape[0] = indices.size();
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace nodebench
