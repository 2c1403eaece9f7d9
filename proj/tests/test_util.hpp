#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dircr/ops.hpp"
#include "dircr/rng.hpp"
#include "dircr/tensor.hpp"

namespace dircr::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Real>(scale * rng.normal());
  return Tensor::from_vector(std::move(shape), std::move(v), requires_grad);
}

inline Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(lo, hi));
  return Tensor::from_vector(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const Real> a, std::span<const Real> b) {
  double m = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return a.size() == b.size() ? m : INFINITY;
}

/// |a - n| / max(1, |a|, |n|): relative error with a unit floor so that
/// near-zero derivatives are compared absolutely.
inline double fd_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

struct GradCheck {
  double max_error = 0;
  std::string worst;
  int checked = 0;
  // Coordinates whose stencil straddles a kink (ReLU and the like): central
  // differences at step h and h/2 disagree, so neither is a derivative.
  int nonsmooth = 0;
};

/// Compares the backpropagated gradient of the scalar `loss()` against
/// central differences for up to `per_tensor` coordinates of each input.
/// A coordinate counts as non-smooth, and is left out of max_error, when the
/// analytic value disagrees with the step-h difference and the step-h and
/// step-h/2 differences also disagree with each other by more than
/// `kink_tolerance`.
inline GradCheck grad_check(const std::function<Tensor()>& loss, std::vector<std::pair<std::string, Tensor>> inputs,
                            double step, int per_tensor, std::uint64_t seed = 7, double kink_tolerance = 1e-3) {
  for (auto& [name, t] : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  loss().backward();
  GradCheck res;
  Rng rng(seed);
  for (auto& [name, t] : inputs) {
    std::vector<Real> analytic = t.has_grad() ? std::vector<Real>(t.grad().begin(), t.grad().end())
                                              : std::vector<Real>(t.numel(), Real{0});
    std::vector<std::int64_t> coords;
    if (t.numel() <= per_tensor) {
      for (std::int64_t i = 0; i < t.numel(); ++i) coords.push_back(i);
    } else {
      for (int k = 0; k < per_tensor; ++k) coords.push_back(static_cast<std::int64_t>(rng.below(t.numel())));
    }
    for (auto i : coords) {
      NoGradGuard no_grad;
      Real& x = t.data()[i];
      const Real orig = x;
      auto central = [&](double h) {
        x = static_cast<Real>(orig + h);
        const double up = loss().item();
        x = static_cast<Real>(orig - h);
        const double down = loss().item();
        x = orig;
        // Divide by the step actually taken after rounding to Real.
        const double taken = double(static_cast<Real>(orig + h)) - double(static_cast<Real>(orig - h));
        return (up - down) / taken;
      };
      const double numeric = central(step);
      double err = fd_rel_error(analytic[i], numeric);
      ++res.checked;
      if (err > kink_tolerance) {
        const double half = central(step / 2);
        if (fd_rel_error(numeric, half) > kink_tolerance) {
          ++res.nonsmooth;
          continue;
        }
      }
      if (err > res.max_error) {
        res.max_error = err;
        res.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return res;
}

/// Sum of x * w for a fixed random w scaled by 1/sqrt(numel), so that the
/// probe loss stays O(1) and every output element carries gradient.
inline Tensor probe(const Tensor& x, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor w = random_tensor(x.shape(), rng, 1.0 / std::sqrt(double(x.numel())));
  return ops::sum(ops::mul(x, w));
}

}  // namespace dircr::testing
