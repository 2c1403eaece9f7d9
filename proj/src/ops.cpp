#include "dircr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dircr/errors.hpp"
#include "dircr/kernels/kernels.hpp"

namespace dircr::ops {

using detail::make_result;
using detail::Node;

namespace {

constexpr std::int64_t kParallelThreshold = 1 << 15;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw IndexOutOfRange("axis " + std::to_string(axis));
  return a;
}

std::vector<Real> alloc(std::int64_t n) { return std::vector<Real>(static_cast<std::size_t>(n)); }

// Elementwise unary op with derivative expressed from (x, y).
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const std::int64_t n = x.numel();
  auto out = alloc(n);
  const Real* in = x.data().data();
#pragma omp parallel for simd if (n > kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Real* gx = p.grad_buffer();
    const Real* xv = p.data();
    const Real* yv = self.data();
    const Real* gy = self.grad.data();
    const std::int64_t m = self.numel();
#pragma omp parallel for simd if (m > kParallelThreshold)
    for (std::int64_t i = 0; i < m; ++i) gx[i] += gy[i] * deriv(xv[i], yv[i]);
  });
}

void accumulate(Node& p, const Real* g, std::int64_t n, Real factor = Real{1}) {
  if (!p.requires_grad) return;
  Real* dst = p.grad_buffer();
#pragma omp parallel for simd if (n > kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) dst[i] += factor * g[i];
}

Shape strides_of(const Shape& s) {
  Shape st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const std::int64_t n = a.numel();
  auto out = alloc(n);
  const Real* x = a.data().data();
  const Real* y = b.data().data();
#pragma omp parallel for simd if (n > kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.parents[0], self.grad.data(), self.numel());
    accumulate(*self.parents[1], self.grad.data(), self.numel());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const std::int64_t n = a.numel();
  auto out = alloc(n);
  const Real* x = a.data().data();
  const Real* y = b.data().data();
#pragma omp parallel for simd if (n > kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.parents[0], self.grad.data(), self.numel());
    accumulate(*self.parents[1], self.grad.data(), self.numel(), Real{-1});
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const std::int64_t n = a.numel();
  auto out = alloc(n);
  const Real* x = a.data().data();
  const Real* y = b.data().data();
#pragma omp parallel for simd if (n > kParallelThreshold)
  for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const Real* g = self.grad.data();
    const std::int64_t m = self.numel();
    if (pa.requires_grad) {
      Real* ga = pa.grad_buffer();
      const Real* bv = pb.data();
      for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i] * bv[i];
    }
    if (pb.requires_grad) {
      Real* gb = pb.grad_buffer();
      const Real* av = pa.data();
      for (std::int64_t i = 0; i < m; ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, Real factor) {
  return unary(
      x, [factor](Real v) { return v * factor; }, [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& x, Real value) {
  return unary(
      x, [value](Real v) { return v + value; }, [](Real, Real) { return Real{1}; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real{1} / v; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](Real v) { return v > Real{0} ? v : Real{0}; },
      [](Real v, Real) { return v > Real{0} ? Real{1} : Real{0}; });
}

Tensor gelu(const Tensor& x) {
  constexpr Real inv_sqrt2 = Real(1.0 / std::numbers::sqrt2);
  constexpr Real inv_sqrt2pi = Real(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return unary(
      x, [](Real v) { return v * Real(0.5) * (Real{1} + std::erf(v * inv_sqrt2)); },
      [](Real v, Real) {
        const Real cdf = Real(0.5) * (Real{1} + std::erf(v * inv_sqrt2));
        const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (Real v : x.data()) acc += v;
  return make_result({}, {static_cast<Real>(acc)}, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Real* g = p.grad_buffer();
    const Real gy = self.grad[0];
    for (std::int64_t i = 0; i < p.numel(); ++i) g[i] += gy;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeMismatch("mean of empty tensor");
  return scale(sum(x), Real{1} / static_cast<Real>(x.numel()));
}

Tensor sum_dim(const Tensor& x, int axis) {
  const int a = normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s[i];
  for (int i = a + 1; i < x.rank(); ++i) inner *= s[i];
  const std::int64_t len = s[a];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + a);
  auto out = alloc(outer * inner);
  const Real* in = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k = 0; k < len; ++k) {
      const Real* src = in + (o * len + k) * inner;
      Real* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x}, [outer, inner, len](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Real* g = p.grad_buffer();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t k = 0; k < len; ++k) {
        Real* dst = g + (o * len + k) * inner;
        const Real* src = self.grad.data() + o * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor mean_dim(const Tensor& x, int axis) {
  const std::int64_t len = x.dim(axis);
  if (len == 0) throw ShapeMismatch("mean over empty axis");
  return scale(sum_dim(x, axis), Real{1} / static_cast<Real>(len));
}

Tensor reshape(const Tensor& x, Shape shape) {
  int infer = -1;
  std::int64_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeMismatch("reshape: more than one -1");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw ShapeMismatch("reshape: cannot infer axis for " + shape_str(x.shape()));
    }
    shape[infer] = x.numel() / known;
  }
  return detail::make_view(x, std::move(shape), [](Node& self) {
    accumulate(*self.parents[0], self.grad.data(), self.numel());
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) throw ShapeMismatch("permute: order has wrong length");
  std::vector<int> check(order);
  std::sort(check.begin(), check.end());
  for (int i = 0; i < r; ++i) {
    if (check[i] != i) throw ShapeMismatch("permute: order is not a permutation");
  }
  const Shape& in_shape = x.shape();
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = in_shape[order[i]];
  const Shape in_strides = strides_of(in_shape);
  // Stride into the input for each output axis.
  Shape src_strides(r);
  for (int i = 0; i < r; ++i) src_strides[i] = in_strides[order[i]];

  const std::int64_t n = x.numel();
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  {
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t src = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      map[i] = src;
      for (int d = r - 1; d >= 0; --d) {
        if (++idx[d] < out_shape[d]) {
          src += src_strides[d];
          break;
        }
        src -= src_strides[d] * (out_shape[d] - 1);
        idx[d] = 0;
      }
    }
  }
  auto out = alloc(n);
  const Real* in = x.data().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = in[map[i]];
  return make_result(std::move(out_shape), std::move(out), {x}, [map = std::move(map)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Real* g = p.grad_buffer();
    for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  const int r = parts[0].rank();
  const int a = normalize_axis(axis, r);
  Shape out_shape = parts[0].shape();
  out_shape[a] = 0;
  for (const auto& t : parts) {
    if (t.rank() != r) throw ShapeMismatch("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != a && t.shape()[i] != parts[0].shape()[i]) {
        throw ShapeMismatch("concat: " + shape_str(t.shape()) + " vs " + shape_str(parts[0].shape()));
      }
    }
    out_shape[a] += t.shape()[a];
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= out_shape[i];
  for (int i = a + 1; i < r; ++i) inner *= out_shape[i];
  const std::int64_t out_len = out_shape[a];

  auto out = alloc(shape_numel(out_shape));
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const std::int64_t len = t.shape()[a];
    const Real* src = t.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * len * inner, src + (o + 1) * len * inner,
                out.data() + (o * out_len + off) * inner);
    }
    off += len;
  }
  std::vector<std::int64_t> lens;
  for (const auto& t : parts) lens.push_back(t.shape()[a]);
  return make_result(std::move(out_shape), std::move(out), parts,
                     [outer, inner, out_len, offsets, lens](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (!p.requires_grad) continue;
                         Real* g = p.grad_buffer();
                         const std::int64_t len = lens[k];
                         for (std::int64_t o = 0; o < outer; ++o) {
                           const Real* src = self.grad.data() + (o * out_len + offsets[k]) * inner;
                           Real* dst = g + o * len * inner;
                           for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int a = normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  if (start < 0 || length < 0 || start + length > s[a]) {
    throw IndexOutOfRange("narrow [" + std::to_string(start) + ", +" + std::to_string(length) +
                          ") on axis of size " + std::to_string(s[a]));
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s[i];
  for (int i = a + 1; i < x.rank(); ++i) inner *= s[i];
  const std::int64_t len = s[a];
  Shape out_shape = s;
  out_shape[a] = length;
  auto out = alloc(shape_numel(out_shape));
  const Real* in = x.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy(in + (o * len + start) * inner, in + (o * len + start + length) * inner,
              out.data() + o * length * inner);
  }
  return make_result(std::move(out_shape), std::move(out), {x},
                     [outer, inner, len, start, length](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       Real* g = p.grad_buffer();
                       for (std::int64_t o = 0; o < outer; ++o) {
                         const Real* src = self.grad.data() + o * length * inner;
                         Real* dst = g + (o * len + start) * inner;
                         for (std::int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor index_select(const Tensor& x, std::span<const std::int64_t> indices) {
  if (x.rank() == 0) throw ShapeMismatch("index_select on a scalar");
  const std::int64_t rows = x.dim(0);
  const std::int64_t row_size = rows == 0 ? 0 : x.numel() / rows;
  for (auto i : indices) {
    if (i < 0 || i >= rows) throw IndexOutOfRange("index_select row " + std::to_string(i));
  }
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<std::int64_t>(indices.size());
  auto out = alloc(shape_numel(out_shape));
  const Real* in = x.data().data();
  const auto n_idx = static_cast<std::int64_t>(indices.size());
#pragma omp parallel for schedule(static) if (n_idx * row_size > kParallelThreshold)
  for (std::int64_t k = 0; k < n_idx; ++k) {
    std::copy(in + indices[k] * row_size, in + (indices[k] + 1) * row_size,
              out.data() + k * row_size);
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  return make_result(std::move(out_shape), std::move(out), {x},
                     [idx = std::move(idx), row_size](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       Real* g = p.grad_buffer();
                       // Serial so repeated indices accumulate deterministically.
                       for (std::size_t k = 0; k < idx.size(); ++k) {
                         const Real* src = self.grad.data() + k * row_size;
                         Real* dst = g + idx[k] * row_size;
                         for (std::int64_t i = 0; i < row_size; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor expand(const Tensor& x, const Shape& shape) {
  const int r = x.rank();
  if (static_cast<int>(shape.size()) != r) throw ShapeMismatch("expand: rank mismatch");
  for (int i = 0; i < r; ++i) {
    if (x.shape()[i] != shape[i] && x.shape()[i] != 1) {
      throw ShapeMismatch("expand " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
  }
  const Shape in_strides = strides_of(x.shape());
  const std::int64_t n = shape_numel(shape);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(r, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t src = 0;
    for (int d = 0; d < r; ++d) src += (x.shape()[d] == 1 ? 0 : idx[d]) * in_strides[d];
    map[i] = src;
    for (int d = r - 1; d >= 0; --d) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  auto out = alloc(n);
  const Real* in = x.data().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = in[map[i]];
  return make_result(shape, std::move(out), {x}, [map = std::move(map)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Real* g = p.grad_buffer();
    for (std::size_t i = 0; i < map.size(); ++i) g[map[i]] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b) {
  if (a.rank() < 2 || a.rank() > 3 || b.rank() < 2 || b.rank() > 3 || (a.rank() == 2 && b.rank() == 3)) {
    throw ShapeMismatch("matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::int64_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::int64_t n = a.dim(-2), k = a.dim(-1);
  const std::int64_t bk = trans_b ? b.dim(-1) : b.dim(-2);
  const std::int64_t m = trans_b ? b.dim(-2) : b.dim(-1);
  const bool shared_b = b.rank() == 2;
  if (bk != k || (!shared_b && b.dim(0) != batch)) {
    throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                        (trans_b ? "^T" : ""));
  }
  Shape out_shape = a.rank() == 3 ? Shape{batch, n, m} : Shape{n, m};
  auto out = alloc(batch * n * m);
  if (shared_b) {
    // Fold the batch into the row dimension: one large GEMM.
    kernels::gemm(false, trans_b, batch * n, m, k, Real{1}, a.data().data(), k, b.data().data(),
                  trans_b ? k : m, Real{0}, out.data(), m);
  } else {
    kernels::batched_gemm(batch, false, trans_b, n, m, k, a.data().data(), n * k, b.data().data(),
                          k * m, Real{0}, out.data(), n * m);
  }
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [batch, n, k, m, shared_b, trans_b](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const Real* g = self.grad.data();
                       if (pa.requires_grad) {
                         // dA = dC * op(B)^T
                         if (shared_b) {
                           kernels::gemm(false, !trans_b, batch * n, k, m, Real{1}, g, m, pb.data(),
                                         trans_b ? k : m, Real{1}, pa.grad_buffer(), k);
                         } else {
                           kernels::batched_gemm(batch, false, !trans_b, n, k, m, g, n * m,
                                                 pb.data(), k * m, Real{1}, pa.grad_buffer(), n * k);
                         }
                       }
                       if (pb.requires_grad) {
                         if (shared_b) {
                           if (trans_b) {
                             // dB [m,k] = dC^T A
                             kernels::gemm(true, false, m, k, batch * n, Real{1}, g, m, pa.data(), k,
                                           Real{1}, pb.grad_buffer(), k);
                           } else {
                             kernels::gemm(true, false, k, m, batch * n, Real{1}, pa.data(), k, g, m,
                                           Real{1}, pb.grad_buffer(), m);
                           }
                         } else if (trans_b) {
                           kernels::batched_gemm(batch, true, false, m, k, n, g, n * m, pa.data(),
                                                 n * k, Real{1}, pb.grad_buffer(), k * m);
                         } else {
                           kernels::batched_gemm(batch, true, false, k, m, n, pa.data(), n * k, g,
                                                 n * m, Real{1}, pb.grad_buffer(), k * m);
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(1)) {
    throw ShapeMismatch("linear: input " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()));
  }
  const std::int64_t in = weight.dim(1), out_f = weight.dim(0);
  const std::int64_t rows = x.numel() / in;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
    throw ShapeMismatch("linear: bias " + shape_str(bias.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  auto out = alloc(rows * out_f);
  kernels::gemm(false, true, rows, out_f, in, Real{1}, x.data().data(), in, weight.data().data(),
                in, Real{0}, out.data(), out_f);
  if (bias.defined()) {
    const Real* b = bias.data().data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < out_f; ++j) out[r * out_f + j] += b[j];
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out_shape), std::move(out), std::move(inputs),
                     [rows, in, out_f](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       const Real* g = self.grad.data();
                       if (px.requires_grad) {
                         kernels::gemm(false, false, rows, in, out_f, Real{1}, g, out_f, pw.data(),
                                       in, Real{1}, px.grad_buffer(), in);
                       }
                       if (pw.requires_grad) {
                         kernels::gemm(true, false, out_f, in, rows, Real{1}, g, out_f, px.data(),
                                       in, Real{1}, pw.grad_buffer(), in);
                       }
                       if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                         Real* gb = self.parents[2]->grad_buffer();
                         for (std::int64_t r = 0; r < rows; ++r)
                           for (std::int64_t j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
                       }
                     });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeMismatch("softmax of a scalar");
  const std::int64_t cols = x.dim(-1);
  const std::int64_t rows = cols == 0 ? 0 : x.numel() / cols;
  auto out = alloc(x.numel());
  kernels::softmax_rows(rows, cols, x.data(), out);
  return make_result(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    kernels::softmax_rows_backward(
        rows, cols, {self.data(), static_cast<std::size_t>(self.numel())}, self.grad,
        {p.grad_buffer(), static_cast<std::size_t>(p.numel())});
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeMismatch("log_softmax of a scalar");
  const std::int64_t cols = x.dim(-1);
  const std::int64_t rows = cols == 0 ? 0 : x.numel() / cols;
  auto out = alloc(x.numel());
  const Real* in = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* row = in + r * cols;
    const Real mx = *std::max_element(row, row + cols);
    double total = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) total += std::exp(static_cast<double>(row[j] - mx));
    const Real lse = mx + static_cast<Real>(std::log(total));
    for (std::int64_t j = 0; j < cols; ++j) out[r * cols + j] = row[j] - lse;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Real* g = p.grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r) {
      const Real* gy = self.grad.data() + r * cols;
      const Real* y = self.data() + r * cols;
      double gsum = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) gsum += gy[j];
      for (std::int64_t j = 0; j < cols; ++j)
        g[r * cols + j] += gy[j] - std::exp(y[j]) * static_cast<Real>(gsum);
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t stride,
              std::int64_t pad) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(2) != weight.dim(3) ||
      x.dim(1) != weight.dim(1)) {
    throw ShapeMismatch("conv2d: input " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()));
  }
  kernels::Conv2dGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = stride;
  g.pad = pad;
  if (g.out_height() <= 0 || g.out_width() <= 0) throw ShapeMismatch("conv2d: empty output");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    throw ShapeMismatch("conv2d: bias " + shape_str(bias.shape()));
  }
  auto out = alloc(g.out_size());
  kernels::conv2d_forward(g, x.data(), weight.data(),
                          bias.defined() ? bias.data() : std::span<const Real>{}, out);
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result({g.batch, g.out_channels, g.out_height(), g.out_width()}, std::move(out),
                     std::move(inputs), [g](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       auto as_span = [](Node& n, bool want) {
                         return want ? std::span<Real>(n.grad_buffer(), static_cast<std::size_t>(n.numel()))
                                     : std::span<Real>{};
                       };
                       std::span<Real> db;
                       if (self.parents.size() > 2) db = as_span(*self.parents[2], self.parents[2]->requires_grad);
                       kernels::conv2d_backward(
                           g, {px.data(), static_cast<std::size_t>(px.numel())},
                           {pw.data(), static_cast<std::size_t>(pw.numel())}, self.grad,
                           as_span(px, px.requires_grad), as_span(pw, pw.requires_grad), db);
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, Real momentum, Real eps) {
  if (x.rank() != 4 && x.rank() != 2) throw ShapeMismatch("batch_norm: rank must be 2 or 4");
  kernels::NormGeometry g;
  g.batch = x.dim(0);
  g.channels = x.dim(1);
  g.spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->numel() != g.channels) throw ShapeMismatch("batch_norm: per-channel tensor size");
  }
  auto out = alloc(x.numel());
  if (!training) {
    kernels::batch_norm_forward_eval(g, x.data(), gamma.data(), beta.data(), running_mean.data(),
                                     running_var.data(), eps, out);
    Tensor rm = running_mean.detach(), rv = running_var.detach();
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, [g, eps, rm, rv](Node& self) {
      Node& px = *self.parents[0];
      Node& pg = *self.parents[1];
      Node& pb = *self.parents[2];
      auto sp = [](Node& n) {
        return n.requires_grad ? std::span<Real>(n.grad_buffer(), static_cast<std::size_t>(n.numel()))
                               : std::span<Real>{};
      };
      kernels::batch_norm_backward_eval(g, {px.data(), static_cast<std::size_t>(px.numel())},
                                        {pg.data(), static_cast<std::size_t>(pg.numel())},
                                        rm.data(), rv.data(), eps, self.grad, sp(px), sp(pg), sp(pb));
    });
  }
  if (g.per_channel() < 2) throw ShapeMismatch("batch_norm: training needs more than one value per channel");
  std::vector<Real> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<Real> mu(static_cast<std::size_t>(g.channels)), istd(static_cast<std::size_t>(g.channels));
  kernels::batch_norm_forward_train(g, x.data(), gamma.data(), beta.data(), eps, out, xhat, mu, istd);
  {
    // Running statistics use the unbiased batch variance.
    const double m = static_cast<double>(g.per_channel());
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::int64_t c = 0; c < g.channels; ++c) {
      const double var = 1.0 / (static_cast<double>(istd[c]) * istd[c]) - eps;
      rm[c] = static_cast<Real>(momentum * rm[c] + (1.0 - momentum) * mu[c]);
      rv[c] = static_cast<Real>(momentum * rv[c] + (1.0 - momentum) * var * m / (m - 1.0));
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [g, xhat = std::move(xhat), istd = std::move(istd)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       auto sp = [](Node& n) {
                         return n.requires_grad
                                    ? std::span<Real>(n.grad_buffer(), static_cast<std::size_t>(n.numel()))
                                    : std::span<Real>{};
                       };
                       kernels::batch_norm_backward_train(g, xhat, {pg.data(), static_cast<std::size_t>(pg.numel())},
                                                          istd, self.grad, sp(px), sp(pg), sp(pb));
                     });
}

Tensor dropout(const Tensor& x, Real p, bool training, Rng& rng) {
  if (!training || p <= Real{0}) return x;
  if (p >= Real{1}) throw ConfigError("dropout probability must be below 1");
  const std::int64_t n = x.numel();
  std::vector<Real> mask(static_cast<std::size_t>(n));
  const Real keep_scale = Real{1} / (Real{1} - p);
  for (auto& m : mask) m = rng.uniform01() < p ? Real{0} : keep_scale;
  auto out = alloc(n);
  const Real* in = x.data().data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = in[i] * mask[i];
  return make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    Real* g = px.grad_buffer();
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor l2_normalize(const Tensor& x, Real min_norm) {
  if (x.rank() == 0) throw ShapeMismatch("l2_normalize of a scalar");
  const std::int64_t cols = x.dim(-1);
  const std::int64_t rows = cols == 0 ? 0 : x.numel() / cols;
  auto out = alloc(x.numel());
  std::vector<Real> norms(static_cast<std::size_t>(rows));
  const Real* in = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) sq += static_cast<double>(in[r * cols + j]) * in[r * cols + j];
    const double nrm = std::sqrt(sq);
    if (nrm < min_norm) {  // NaN passes through so the caller sees a non-finite loss
      throw DegenerateInput("row " + std::to_string(r) + " has norm " + std::to_string(nrm));
    }
    norms[r] = static_cast<Real>(nrm);
    for (std::int64_t j = 0; j < cols; ++j) out[r * cols + j] = static_cast<Real>(in[r * cols + j] / nrm);
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, cols, norms = std::move(norms)](Node& self) {
    Node& px = *self.parents[0];
    if (!px.requires_grad) return;
    Real* g = px.grad_buffer();
    for (std::int64_t r = 0; r < rows; ++r) {
      const Real* y = self.data() + r * cols;
      const Real* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) dot += static_cast<double>(y[j]) * gy[j];
      for (std::int64_t j = 0; j < cols; ++j)
        g[r * cols + j] += static_cast<Real>((gy[j] - y[j] * dot) / norms[r]);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2) throw ShapeMismatch("cross_entropy: logits must be [B, n]");
  const std::int64_t batch = logits.dim(0), n = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != batch) {
    throw ShapeMismatch("cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                        std::to_string(batch));
  }
  if (batch == 0) throw ShapeMismatch("cross_entropy: empty batch");
  std::vector<std::int64_t> picks;
  picks.reserve(targets.size());
  for (std::int64_t b = 0; b < batch; ++b) {
    const int t = targets[b];
    if (t < 0 || t >= n) throw IndexOutOfRange("target " + std::to_string(t) + " outside 0.." + std::to_string(n - 1));
    picks.push_back(b * n + t);
  }
  Tensor lp = reshape(log_softmax(logits), {batch * n, 1});
  return scale(sum(index_select(lp, picks)), Real{-1} / static_cast<Real>(batch));
}

}  // namespace dircr::ops
