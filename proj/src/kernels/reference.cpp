#include "dircr/kernels/reference.hpp"

#include <algorithm>
#include <cmath>

namespace dircr::kernels::reference {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, Real alpha,
          const Real* a, std::int64_t lda, const Real* b, std::int64_t ldb, Real beta, Real* c,
          std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) {
        const Real av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const Real bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += static_cast<double>(av) * bv;
      }
      Real& out = c[i * ldc + j];
      out = static_cast<Real>(alpha * acc + (beta == Real{0} ? 0.0 : beta * out));
    }
  }
}

void conv2d_forward(const Conv2dGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<const Real> bias, std::span<Real> y) {
  const std::int64_t oh_n = g.out_height(), ow_n = g.out_width();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      for (std::int64_t oh = 0; oh < oh_n; ++oh) {
        for (std::int64_t ow = 0; ow < ow_n; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
              const std::int64_t ih = oh * g.stride - g.pad + ki;
              if (ih < 0 || ih >= g.height) continue;
              for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                const std::int64_t iw = ow * g.stride - g.pad + kj;
                if (iw < 0 || iw >= g.width) continue;
                acc += static_cast<double>(
                           x[((n * g.in_channels + ci) * g.height + ih) * g.width + iw]) *
                       w[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj];
              }
            }
          }
          y[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow] = static_cast<Real>(acc);
        }
      }
    }
  }
}

void conv2d_backward(const Conv2dGeometry& g, std::span<const Real> x, std::span<const Real> w,
                     std::span<const Real> dy, std::span<Real> dx, std::span<Real> dw,
                     std::span<Real> db) {
  const std::int64_t oh_n = g.out_height(), ow_n = g.out_width();
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      for (std::int64_t oh = 0; oh < oh_n; ++oh) {
        for (std::int64_t ow = 0; ow < ow_n; ++ow) {
          const Real gout = dy[((n * g.out_channels + co) * oh_n + oh) * ow_n + ow];
          if (!db.empty()) db[co] += gout;
          for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
              const std::int64_t ih = oh * g.stride - g.pad + ki;
              if (ih < 0 || ih >= g.height) continue;
              for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
                const std::int64_t iw = ow * g.stride - g.pad + kj;
                if (iw < 0 || iw >= g.width) continue;
                const std::int64_t xi = ((n * g.in_channels + ci) * g.height + ih) * g.width + iw;
                const std::int64_t wi = ((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj;
                if (!dw.empty()) dw[wi] += gout * x[xi];
                if (!dx.empty()) dx[xi] += gout * w[wi];
              }
            }
          }
        }
      }
    }
  }
}

void batch_norm_forward_train(const NormGeometry& g, std::span<const Real> x,
                              std::span<const Real> gamma, std::span<const Real> beta, Real eps,
                              std::span<Real> y, std::span<Real> xhat, std::span<Real> mean,
                              std::span<Real> inv_std) {
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t s = 0; s < g.spatial; ++s) sum += x[(n * g.channels + c) * g.spatial + s];
    const double mu = sum / static_cast<double>(g.per_channel());
    double var = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const double d = x[(n * g.channels + c) * g.spatial + s] - mu;
        var += d * d;
      }
    }
    var /= static_cast<double>(g.per_channel());
    const double istd = 1.0 / std::sqrt(var + eps);
    mean[c] = static_cast<Real>(mu);
    inv_std[c] = static_cast<Real>(istd);
    for (std::int64_t n = 0; n < g.batch; ++n) {
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const std::int64_t i = (n * g.channels + c) * g.spatial + s;
        xhat[i] = static_cast<Real>((x[i] - mu) * istd);
        y[i] = gamma[c] * xhat[i] + beta[c];
      }
    }
  }
}

void batch_norm_backward_train(const NormGeometry& g, std::span<const Real> xhat,
                               std::span<const Real> gamma, std::span<const Real> inv_std,
                               std::span<const Real> dy, std::span<Real> dx,
                               std::span<Real> dgamma, std::span<Real> dbeta) {
  const double m = static_cast<double>(g.per_channel());
  for (std::int64_t c = 0; c < g.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const std::int64_t i = (n * g.channels + c) * g.spatial + s;
        sum_dy += dy[i];
        sum_dy_xhat += static_cast<double>(dy[i]) * xhat[i];
      }
    }
    if (!dgamma.empty()) dgamma[c] += static_cast<Real>(sum_dy_xhat);
    if (!dbeta.empty()) dbeta[c] += static_cast<Real>(sum_dy);
    if (dx.empty()) continue;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      for (std::int64_t s = 0; s < g.spatial; ++s) {
        const std::int64_t i = (n * g.channels + c) * g.spatial + s;
        const double dxhat = static_cast<double>(dy[i]) * gamma[c];
        // d/dx of (x - mu) * istd, written out from the three terms of the chain rule.
        dx[i] += static_cast<Real>(inv_std[c] *
                                   (dxhat - gamma[c] * sum_dy / m -
                                    xhat[i] * gamma[c] * sum_dy_xhat / m));
      }
    }
  }
}

void softmax_rows(std::int64_t rows, std::int64_t cols, std::span<const Real> x, std::span<Real> y) {
  for (std::int64_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max<double>(mx, x[r * cols + j]);
    double total = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) total += std::exp(x[r * cols + j] - mx);
    for (std::int64_t j = 0; j < cols; ++j)
      y[r * cols + j] = static_cast<Real>(std::exp(x[r * cols + j] - mx) / total);
  }
}

}  // namespace dircr::kernels::reference
