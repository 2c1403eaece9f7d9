#pragma once

// Parallel compute kernels. Every kernel here has a serial counterpart in
// reference.hpp with the same signature; the test suite checks them against
// each other and bench/ compares their throughput.
//
// Outputs named `y` are overwritten. Gradient outputs (`dx`, `dw`, ...) are
// accumulated into, and an empty span skips that gradient.

#include <cstdint>
#include <span>

#include "dircr/kernels/geometry.hpp"
#include "dircr/real.hpp"

namespace dircr::kernels {

/// Row-major C = alpha * op(A) * op(B) + beta * C, with op(A) M x K and op(B) K x N.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, Real alpha,
          const Real* a, std::int64_t lda, const Real* b, std::int64_t ldb, Real beta, Real* c,
          std::int64_t ldc);

/// `count` independent GEMMs over contiguous, equally strided operands.
/// A stride of 0 on `b` broadcasts one right-hand matrix over the batch.
void batched_gemm(std::int64_t count, bool trans_a, bool trans_b, std::int64_t m, std::int64_t n,
                  std::int64_t k, const Real* a, std::int64_t stride_a, const Real* b,
                  std::int64_t stride_b, Real beta, Real* c, std::int64_t stride_c);

void conv2d_forward(const Conv2dGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<const Real> bias, std::span<Real> y);

void conv2d_backward(const Conv2dGeometry& g, std::span<const Real> x, std::span<const Real> w,
                     std::span<const Real> dy, std::span<Real> dx, std::span<Real> dw,
                     std::span<Real> db);

/// Training-mode batch norm. Writes y, the normalized input `xhat`, the batch
/// mean and the inverse standard deviation per channel.
void batch_norm_forward_train(const NormGeometry& g, std::span<const Real> x,
                              std::span<const Real> gamma, std::span<const Real> beta, Real eps,
                              std::span<Real> y, std::span<Real> xhat, std::span<Real> mean,
                              std::span<Real> inv_std);

void batch_norm_forward_eval(const NormGeometry& g, std::span<const Real> x,
                             std::span<const Real> gamma, std::span<const Real> beta,
                             std::span<const Real> running_mean, std::span<const Real> running_var,
                             Real eps, std::span<Real> y);

/// Backward of the training-mode forward (batch statistics are functions of x).
void batch_norm_backward_train(const NormGeometry& g, std::span<const Real> xhat,
                               std::span<const Real> gamma, std::span<const Real> inv_std,
                               std::span<const Real> dy, std::span<Real> dx,
                               std::span<Real> dgamma, std::span<Real> dbeta);

/// Backward of the inference-mode forward (statistics are constants).
void batch_norm_backward_eval(const NormGeometry& g, std::span<const Real> x,
                              std::span<const Real> gamma, std::span<const Real> running_mean,
                              std::span<const Real> running_var, Real eps,
                              std::span<const Real> dy, std::span<Real> dx,
                              std::span<Real> dgamma, std::span<Real> dbeta);

/// Softmax over the last axis of a [rows, cols] matrix.
void softmax_rows(std::int64_t rows, std::int64_t cols, std::span<const Real> x, std::span<Real> y);

/// dx += y * (dy - sum(dy * y)) row-wise.
void softmax_rows_backward(std::int64_t rows, std::int64_t cols, std::span<const Real> y,
                           std::span<const Real> dy, std::span<Real> dx);

}  // namespace dircr::kernels
