#pragma once

// Differentiable tensor operations. Each function records its backward step
// on the autograd graph when gradient recording is enabled.

#include <cstdint>
#include <span>
#include <vector>

#include "dircr/rng.hpp"
#include "dircr/tensor.hpp"

namespace dircr::ops {

// Elementwise, shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, Real factor);
Tensor add_scalar(const Tensor& x, Real value);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reductions over one axis; the axis is removed from the result.
Tensor sum_dim(const Tensor& x, int axis);
Tensor mean_dim(const Tensor& x, int axis);

/// Zero-copy reshape; one extent may be -1.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
/// Gathers slices along axis 0; indices may repeat (gradients accumulate).
Tensor index_select(const Tensor& x, std::span<const std::int64_t> indices);
/// Broadcasts size-1 axes of `x` to `shape` (same rank).
Tensor expand(const Tensor& x, const Shape& shape);

/// Matrix product over the last two axes. `a` is [n,k] or [B,n,k]; `b` is
/// [k,m] or [B,k,m] ([.., m, k] when `trans_b`). A rank-2 `b` is shared
/// across the batch of a rank-3 `a`.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b = false);

/// y = x W^T + b over the last axis. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Softmax / log-softmax over the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// NCHW convolution with a square kernel; `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t stride,
              std::int64_t pad);

/// Per-channel batch normalization of [N,C,H,W] or [N,C]. In training mode
/// the running statistics are updated in place as
/// running = momentum * running + (1 - momentum) * batch.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, Real momentum, Real eps);

/// Inverted dropout: kept units are scaled by 1 / (1 - p).
Tensor dropout(const Tensor& x, Real p, bool training, Rng& rng);

/// Unit-L2 rows along the last axis. Throws DegenerateInput when a row norm
/// falls below `min_norm`.
Tensor l2_normalize(const Tensor& x, Real min_norm = Real(1e-12));

/// Mean negative log-likelihood of `targets` under softmax(logits), logits [B, n].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

}  // namespace dircr::ops
