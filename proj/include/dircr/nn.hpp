#pragma once

// Parameterized layers on top of ops. Modules own their parameters and
// buffers and expose them by dotted name for the optimizer and checkpoints.

#include <string>
#include <utility>
#include <vector>

#include "dircr/ops.hpp"
#include "dircr/rng.hpp"
#include "dircr/tensor.hpp"

namespace dircr::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  /// Parameters in registration order, recursively, named "child.param".
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  /// Non-trainable state (batch-norm running statistics).
  std::vector<NamedTensor> named_buffers() const;

  void train(bool on = true);
  void eval() { train(false); }
  bool is_training() const { return training_; }

 protected:
  Tensor register_parameter(std::string name, Tensor t);
  Tensor register_buffer(std::string name, Tensor t);
  void register_module(std::string name, Module& child);

 private:
  void collect(const std::string& prefix, bool buffers, std::vector<NamedTensor>& out) const;

  bool training_ = true;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

/// He-normal initialized convolution.
class Conv2d : public Module {
 public:
  Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
         std::int64_t pad, bool bias, Rng& rng);
  Tensor forward(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride_, pad_); }

  Tensor weight;
  Tensor bias;

 private:
  std::int64_t stride_, pad_;
};

class BatchNorm : public Module {
 public:
  explicit BatchNorm(std::int64_t channels, Real momentum = Real(0.9), Real eps = Real(1e-5));
  Tensor forward(const Tensor& x);

  Tensor gamma, beta;
  Tensor running_mean, running_var;

 private:
  Real momentum_, eps_;
};

class Linear : public Module {
 public:
  Linear(std::int64_t in, std::int64_t out, bool bias, Rng& rng);
  Tensor forward(const Tensor& x) const { return ops::linear(x, weight, bias); }

  Tensor weight;
  Tensor bias;
};

/// Conv3x3 (no bias) -> BatchNorm -> ReLU.
class ConvNormAct : public Module {
 public:
  ConvNormAct(std::int64_t in, std::int64_t out, Rng& rng);
  Tensor forward(const Tensor& x);

  Conv2d conv;
  BatchNorm norm;
};

/// Multi-head scaled dot-product attention with input and output projections.
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(std::int64_t dim, std::int64_t heads, Rng& rng);

  /// query [M, Tq, D], context [M, Tk, D] -> [M, Tq, D]. When `weights` is
  /// non-null it receives the attention matrix [M * heads, Tq, Tk].
  Tensor forward(const Tensor& query, const Tensor& context, Tensor* weights = nullptr) const;

  std::int64_t heads() const { return heads_; }

  Linear q_proj, k_proj, v_proj, out_proj;

 private:
  std::int64_t dim_, heads_;
};

}  // namespace dircr::nn
