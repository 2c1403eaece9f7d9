#include "dircr/kernels/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

namespace dircr::kernels {
namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Samples per im2col chunk: enough columns to keep the GEMM efficient while
// bounding the scratch buffer.
std::int64_t conv_chunk(const Conv2dGeometry& g) {
  const std::int64_t cols_per_sample = g.out_height() * g.out_width();
  std::int64_t chunk = std::max<std::int64_t>(1, 2048 / cols_per_sample);
  const std::int64_t max_scratch = std::int64_t{1} << 22;
  while (chunk > 1 && chunk * cols_per_sample * g.patch_size() > max_scratch) chunk /= 2;
  return std::min(chunk, g.batch);
}

// cols[kd, n * P + p] for samples [n0, n0 + count).
void im2col(const Conv2dGeometry& g, const Real* x, std::int64_t n0, std::int64_t count,
            Real* cols) {
  const std::int64_t oh_n = g.out_height(), ow_n = g.out_width();
  const std::int64_t p_n = oh_n * ow_n;
  const std::int64_t ncols = count * p_n;
  for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
        Real* row = cols + ((ci * g.kernel + ki) * g.kernel + kj) * ncols;
        for (std::int64_t s = 0; s < count; ++s) {
          const Real* plane = x + ((n0 + s) * g.in_channels + ci) * g.height * g.width;
          Real* out = row + s * p_n;
          for (std::int64_t oh = 0; oh < oh_n; ++oh) {
            const std::int64_t ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.height) {
              std::fill(out + oh * ow_n, out + (oh + 1) * ow_n, Real{0});
              continue;
            }
            for (std::int64_t ow = 0; ow < ow_n; ++ow) {
              const std::int64_t iw = ow * g.stride - g.pad + kj;
              out[oh * ow_n + ow] = (iw >= 0 && iw < g.width) ? plane[ih * g.width + iw] : Real{0};
            }
          }
        }
      }
    }
  }
}

void col2im_add(const Conv2dGeometry& g, const Real* cols, std::int64_t n0, std::int64_t count,
                Real* dx) {
  const std::int64_t oh_n = g.out_height(), ow_n = g.out_width();
  const std::int64_t p_n = oh_n * ow_n;
  const std::int64_t ncols = count * p_n;
  for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
      for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
        const Real* row = cols + ((ci * g.kernel + ki) * g.kernel + kj) * ncols;
        for (std::int64_t s = 0; s < count; ++s) {
          Real* plane = dx + ((n0 + s) * g.in_channels + ci) * g.height * g.width;
          const Real* in = row + s * p_n;
          for (std::int64_t oh = 0; oh < oh_n; ++oh) {
            const std::int64_t ih = oh * g.stride - g.pad + ki;
            if (ih < 0 || ih >= g.height) continue;
            for (std::int64_t ow = 0; ow < ow_n; ++ow) {
              const std::int64_t iw = ow * g.stride - g.pad + kj;
              if (iw >= 0 && iw < g.width) plane[ih * g.width + iw] += in[oh * ow_n + ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, Real alpha,
          const Real* a, std::int64_t lda, const Real* b, std::int64_t ldb, Real beta, Real* c,
          std::int64_t ldc) {
  MutMap cm(c, m, n, Eigen::OuterStride<>(ldc));
  if (beta == Real{0}) {
    cm.setZero();
  } else if (beta != Real{1}) {
    cm *= beta;
  }
  if (k == 0) return;
  ConstMap am(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  ConstMap bm(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  if (!trans_a && !trans_b) {
    cm.noalias() += alpha * am * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += alpha * am * bm.transpose();
  } else if (trans_a && !trans_b) {
    cm.noalias() += alpha * am.transpose() * bm;
  } else {
    cm.noalias() += alpha * am.transpose() * bm.transpose();
  }
}

void batched_gemm(std::int64_t count, bool trans_a, bool trans_b, std::int64_t m, std::int64_t n,
                  std::int64_t k, const Real* a, std::int64_t stride_a, const Real* b,
                  std::int64_t stride_b, Real beta, Real* c, std::int64_t stride_c) {
  const std::int64_t lda = trans_a ? m : k;
  const std::int64_t ldb = trans_b ? k : n;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    gemm(trans_a, trans_b, m, n, k, Real{1}, a + i * stride_a, lda, b + i * stride_b, ldb, beta,
         c + i * stride_c, n);
  }
}

void conv2d_forward(const Conv2dGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<const Real> bias, std::span<Real> y) {
  const std::int64_t p_n = g.out_height() * g.out_width();
  const std::int64_t kd = g.patch_size();
  const std::int64_t chunk = conv_chunk(g);
  const std::int64_t n_chunks = (g.batch + chunk - 1) / chunk;

#pragma omp parallel
  {
    std::vector<Real> cols(static_cast<std::size_t>(chunk * p_n * kd));
    std::vector<Real> out(static_cast<std::size_t>(chunk * p_n * g.out_channels));
#pragma omp for schedule(static)
    for (std::int64_t c = 0; c < n_chunks; ++c) {
      const std::int64_t n0 = c * chunk;
      const std::int64_t count = std::min(chunk, g.batch - n0);
      const std::int64_t ncols = count * p_n;
      im2col(g, x.data(), n0, count, cols.data());
      gemm(false, false, g.out_channels, ncols, kd, Real{1}, w.data(), kd, cols.data(), ncols,
           Real{0}, out.data(), ncols);
      for (std::int64_t s = 0; s < count; ++s) {
        for (std::int64_t co = 0; co < g.out_channels; ++co) {
          const Real b = bias.empty() ? Real{0} : bias[co];
          const Real* src = out.data() + co * ncols + s * p_n;
          Real* dst = y.data() + ((n0 + s) * g.out_channels + co) * p_n;
          for (std::int64_t p = 0; p < p_n; ++p) dst[p] = src[p] + b;
        }
      }
    }
  }
}

void conv2d_backward(const Conv2dGeometry& g, std::span<const Real> x, std::span<const Real> w,
                     std::span<const Real> dy, std::span<Real> dx, std::span<Real> dw,
                     std::span<Real> db) {
  const std::int64_t p_n = g.out_height() * g.out_width();
  const std::int64_t kd = g.patch_size();
  const std::int64_t chunk = conv_chunk(g);
  const std::int64_t n_chunks = (g.batch + chunk - 1) / chunk;
  const std::int64_t wsize = g.weight_size();

  // Weight gradients are reduced per chunk in chunk order so the result does
  // not depend on the thread count.
  std::vector<Real> dw_partial(dw.empty() ? 0 : static_cast<std::size_t>(n_chunks * wsize));

#pragma omp parallel
  {
    std::vector<Real> cols(static_cast<std::size_t>(chunk * p_n * kd));
    std::vector<Real> dyc(static_cast<std::size_t>(chunk * p_n * g.out_channels));
#pragma omp for schedule(static)
    for (std::int64_t c = 0; c < n_chunks; ++c) {
      const std::int64_t n0 = c * chunk;
      const std::int64_t count = std::min(chunk, g.batch - n0);
      const std::int64_t ncols = count * p_n;
      for (std::int64_t s = 0; s < count; ++s) {
        for (std::int64_t co = 0; co < g.out_channels; ++co) {
          const Real* src = dy.data() + ((n0 + s) * g.out_channels + co) * p_n;
          std::copy(src, src + p_n, dyc.data() + co * ncols + s * p_n);
        }
      }
      if (!dw.empty()) {
        im2col(g, x.data(), n0, count, cols.data());
        gemm(false, true, g.out_channels, kd, ncols, Real{1}, dyc.data(), ncols, cols.data(),
             ncols, Real{0}, dw_partial.data() + c * wsize, kd);
      }
      if (!dx.empty()) {
        gemm(true, false, kd, ncols, g.out_channels, Real{1}, w.data(), kd, dyc.data(), ncols,
             Real{0}, cols.data(), ncols);
        col2im_add(g, cols.data(), n0, count, dx.data());
      }
    }
  }

  if (!dw.empty()) {
    for (std::int64_t c = 0; c < n_chunks; ++c) {
      const Real* part = dw_partial.data() + c * wsize;
#pragma omp simd
      for (std::int64_t i = 0; i < wsize; ++i) dw[i] += part[i];
    }
  }
  if (!db.empty()) {
#pragma omp parallel for schedule(static)
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < g.batch; ++n) {
        const Real* src = dy.data() + (n * g.out_channels + co) * p_n;
        for (std::int64_t p = 0; p < p_n; ++p) acc += src[p];
      }
      db[co] += static_cast<Real>(acc);
    }
  }
}

void batch_norm_forward_train(const NormGeometry& g, std::span<const Real> x,
                              std::span<const Real> gamma, std::span<const Real> beta, Real eps,
                              std::span<Real> y, std::span<Real> xhat, std::span<Real> mean,
                              std::span<Real> inv_std) {
  const double count = static_cast<double>(g.per_channel());
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const Real* src = x.data() + (n * g.channels + c) * g.spatial;
      for (std::int64_t s = 0; s < g.spatial; ++s) sum += src[s];
    }
    const double mu = sum / count;
    double sq = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const Real* src = x.data() + (n * g.channels + c) * g.spatial;
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const double d = src[s] - mu;
        sq += d * d;
      }
    }
    const double istd = 1.0 / std::sqrt(sq / count + eps);
    mean[c] = static_cast<Real>(mu);
    inv_std[c] = static_cast<Real>(istd);
    const Real gm = gamma[c], bt = beta[c];
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const std::int64_t off = (n * g.channels + c) * g.spatial;
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const Real h = static_cast<Real>((x[off + s] - mu) * istd);
        xhat[off + s] = h;
        y[off + s] = gm * h + bt;
      }
    }
  }
}

void batch_norm_forward_eval(const NormGeometry& g, std::span<const Real> x,
                             std::span<const Real> gamma, std::span<const Real> beta,
                             std::span<const Real> running_mean, std::span<const Real> running_var,
                             Real eps, std::span<Real> y) {
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const Real scale = gamma[c] / std::sqrt(running_var[c] + eps);
    const Real shift = beta[c] - running_mean[c] * scale;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const std::int64_t off = (n * g.channels + c) * g.spatial;
      for (std::int64_t s = 0; s < g.spatial; ++s) y[off + s] = x[off + s] * scale + shift;
    }
  }
}

void batch_norm_backward_train(const NormGeometry& g, std::span<const Real> xhat,
                               std::span<const Real> gamma, std::span<const Real> inv_std,
                               std::span<const Real> dy, std::span<Real> dx,
                               std::span<Real> dgamma, std::span<Real> dbeta) {
  const double count = static_cast<double>(g.per_channel());
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const std::int64_t off = (n * g.channels + c) * g.spatial;
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        sum_dy += dy[off + s];
        sum_dy_xhat += static_cast<double>(dy[off + s]) * xhat[off + s];
      }
    }
    if (!dgamma.empty()) dgamma[c] += static_cast<Real>(sum_dy_xhat);
    if (!dbeta.empty()) dbeta[c] += static_cast<Real>(sum_dy);
    if (dx.empty()) continue;
    const double k = static_cast<double>(gamma[c]) * inv_std[c];
    const double mean_dy = sum_dy / count;
    const double mean_dy_xhat = sum_dy_xhat / count;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const std::int64_t off = (n * g.channels + c) * g.spatial;
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        dx[off + s] +=
            static_cast<Real>(k * (dy[off + s] - mean_dy - xhat[off + s] * mean_dy_xhat));
      }
    }
  }
}

void batch_norm_backward_eval(const NormGeometry& g, std::span<const Real> x,
                              std::span<const Real> gamma, std::span<const Real> running_mean,
                              std::span<const Real> running_var, Real eps,
                              std::span<const Real> dy, std::span<Real> dx,
                              std::span<Real> dgamma, std::span<Real> dbeta) {
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const Real istd = Real{1} / std::sqrt(running_var[c] + eps);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const std::int64_t off = (n * g.channels + c) * g.spatial;
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        sum_dy += dy[off + s];
        sum_dy_xhat += static_cast<double>(dy[off + s]) * (x[off + s] - running_mean[c]) * istd;
        if (!dx.empty()) dx[off + s] += dy[off + s] * gamma[c] * istd;
      }
    }
    if (!dgamma.empty()) dgamma[c] += static_cast<Real>(sum_dy_xhat);
    if (!dbeta.empty()) dbeta[c] += static_cast<Real>(sum_dy);
  }
}

void softmax_rows(std::int64_t rows, std::int64_t cols, std::span<const Real> x, std::span<Real> y) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* in = x.data() + r * cols;
    Real* out = y.data() + r * cols;
    const Real mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    const Real inv = static_cast<Real>(1.0 / total);
    for (std::int64_t j = 0; j < cols; ++j) out[j] *= inv;
  }
}

void softmax_rows_backward(std::int64_t rows, std::int64_t cols, std::span<const Real> y,
                           std::span<const Real> dy, std::span<Real> dx) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* yr = y.data() + r * cols;
    const Real* dyr = dy.data() + r * cols;
    Real* dxr = dx.data() + r * cols;
    double dot = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) dot += static_cast<double>(yr[j]) * dyr[j];
    for (std::int64_t j = 0; j < cols; ++j) dxr[j] += yr[j] * static_cast<Real>(dyr[j] - dot);
  }
}

}  // namespace dircr::kernels
