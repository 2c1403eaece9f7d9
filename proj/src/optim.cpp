#include "dircr/optim.hpp"

#include <cmath>

namespace dircr {

Adam::Adam(std::vector<Tensor> params, Real lr, Real weight_decay, Real beta1, Real beta2, Real eps)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), Real{0});
    v_.emplace_back(p.numel(), Real{0});
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++steps_;
  if (lr_ == 0) return;
  const double c1 = 1.0 - std::pow(double(beta1_), double(steps_));
  const double c2 = 1.0 - std::pow(double(beta2_), double(steps_));
  const Real step_size = static_cast<Real>(lr_ / c1);
  const Real c2_sqrt = static_cast<Real>(std::sqrt(c2));
  const Real decay = Real(1) - lr_ * weight_decay_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].data();
    auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const bool has_grad = !g.empty();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const Real gk = has_grad ? g[k] : Real{0};
      m[k] = beta1_ * m[k] + (1 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1 - beta2_) * gk * gk;
      w[k] *= decay;
      w[k] -= step_size * m[k] / (std::sqrt(v[k]) / c2_sqrt + eps_);
    }
  }
}

}  // namespace dircr
