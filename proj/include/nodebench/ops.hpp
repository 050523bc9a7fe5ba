#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nodebench/tensor.hpp"

namespace nodebench {

// Differentiable primitives. Each op validates shapes, checks its forward
// values are finite, and records an adjoint on the active tape when any
// operand requires grad and recording is enabled. Operands are never modified.

// -- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor abs(const Tensor& a);

/// max(x, 0); the derivative at exactly 0 is taken as 0.
Tensor relu(const Tensor& a);

/// Applies `value` elementwise with derivative `derivative`.
Tensor elementwise(const Tensor& a, const std::function<double(double)>& value,
                   const std::function<double(double)>& derivative);

// -- reductions and reshaping -----------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// ℓ2 norm of each slice along the leading axis: [N, ...] -> [N].
/// The gradient of a zero-norm slice is defined as 0.
Tensor sample_l2_norm(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
/// [N, d1, d2, ...] -> [N, d1*d2*...]
Tensor flatten(const Tensor& a);

/// Concatenates two NCHW tensors along the channel axis.
Tensor channel_concat(const Tensor& a, const Tensor& b);

// -- layers -----------------------------------------------------------------

/// Cross-correlation of input [N,C,H,W] with weight [O,C,k,k] plus bias [O]
/// (bias may be undefined). Output [N,O,H',W'] with
/// H' = (H + 2*padding - k) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Per-sample, per-group standardization over (C/groups)*H*W values followed
/// by a per-channel affine map.
Tensor group_norm(const Tensor& x, std::size_t groups, double eps, const Tensor& scale,
                  const Tensor& shift);

/// x [N,in] · weightᵀ [in,out] + bias [out] (bias may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Unpadded max pooling; ties route the gradient to the first maximum.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

/// Global average over H×W: [N,C,H,W] -> [N,C,1,1].
Tensor adaptive_avg_pool2d(const Tensor& x);

enum class Reduction { kMean, kSum };

/// −log softmax(logits)[label], reduced over the batch.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             Reduction reduction = Reduction::kMean);

// -- non-differentiable helpers ---------------------------------------------

/// Row-wise argmax of a [N,K] tensor; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

/// Stacks [n_i, ...] tensors with equal trailing extents along axis 0.
Tensor concat_batch(const std::vector<Tensor>& parts);

/// Rows `indices` of a [N, ...] tensor along axis 0.
Tensor gather_batch(const Tensor& a, std::span<const std::size_t> indices);

}  // namespace nodebench
