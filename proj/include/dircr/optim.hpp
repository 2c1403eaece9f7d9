#pragma once

#include <cstdint>
#include <vector>

#include "dircr/tensor.hpp"

namespace dircr {

/// Adam with decoupled weight decay: each step first scales every parameter
/// by (1 - lr * weight_decay), then applies the bias-corrected Adam update.
/// Parameters that received no gradient are treated as having a zero one.
class Adam {
 public:
  Adam(std::vector<Tensor> params, Real lr, Real weight_decay, Real beta1 = Real(0.9),
       Real beta2 = Real(0.999), Real eps = Real(1e-8));

  void step();
  void zero_grad();

  Real lr() const { return lr_; }
  void set_lr(Real lr) { lr_ = lr; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t n) { steps_ = n; }

  const std::vector<Tensor>& params() const { return params_; }
  std::vector<std::vector<Real>>& first_moments() { return m_; }
  std::vector<std::vector<Real>>& second_moments() { return v_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<Real>> m_, v_;
  Real lr_, weight_decay_, beta1_, beta2_, eps_;
  std::int64_t steps_ = 0;
};

}  // namespace dircr
