#pragma once

// Serial, loop-nest implementations of the kernels in kernels.hpp. They are
// deliberately direct (no im2col, no blocking) and exist as test oracles and
// benchmark baselines.

#include <cstdint>
#include <span>

#include "dircr/kernels/geometry.hpp"
#include "dircr/real.hpp"

namespace dircr::kernels::reference {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, Real alpha,
          const Real* a, std::int64_t lda, const Real* b, std::int64_t ldb, Real beta, Real* c,
          std::int64_t ldc);

void conv2d_forward(const Conv2dGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<const Real> bias, std::span<Real> y);

void conv2d_backward(const Conv2dGeometry& g, std::span<const Real> x, std::span<const Real> w,
                     std::span<const Real> dy, std::span<Real> dx, std::span<Real> dw,
                     std::span<Real> db);

void batch_norm_forward_train(const NormGeometry& g, std::span<const Real> x,
                              std::span<const Real> gamma, std::span<const Real> beta, Real eps,
                              std::span<Real> y, std::span<Real> xhat, std::span<Real> mean,
                              std::span<Real> inv_std);

void batch_norm_backward_train(const NormGeometry& g, std::span<const Real> xhat,
                               std::span<const Real> gamma, std::span<const Real> inv_std,
                               std::span<const Real> dy, std::span<Real> dx,
                               std::span<Real> dgamma, std::span<Real> dbeta);

void softmax_rows(std::int64_t rows, std::int64_t cols, std::span<const Real> x, std::span<Real> y);

}  // namespace dircr::kernels::reference
