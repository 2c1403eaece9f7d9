#include "dircr/nn.hpp"

#include <cmath>

#include "dircr/errors.hpp"

namespace dircr::nn {

std::vector<NamedTensor> Module::named_parameters() const {
  std::vector<NamedTensor> out;
  collect("", false, out);
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

std::vector<NamedTensor> Module::named_buffers() const {
  std::vector<NamedTensor> out;
  collect("", true, out);
  return out;
}

void Module::collect(const std::string& prefix, bool buffers, std::vector<NamedTensor>& out) const {
  for (const auto& p : buffers ? buffers_ : params_) out.push_back({prefix + p.name, p.tensor});
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", buffers, out);
}

void Module::train(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->train(on);
}

Tensor Module::register_parameter(std::string name, Tensor t) {
  t.set_requires_grad(true);
  params_.push_back({std::move(name), t});
  return t;
}

Tensor Module::register_buffer(std::string name, Tensor t) {
  buffers_.push_back({std::move(name), t});
  return t;
}

void Module::register_module(std::string name, Module& child) {
  children_.emplace_back(std::move(name), &child);
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Real>(rng.normal() * stddev);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-bound, bound));
  return Tensor::from_vector(std::move(shape), std::move(v));
}

}  // namespace

Conv2d::Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
               std::int64_t pad, bool bias, Rng& rng)
    : stride_(stride), pad_(pad) {
  const double fan_in = static_cast<double>(in * kernel * kernel);
  weight = register_parameter("weight", normal_tensor({out, in, kernel, kernel}, std::sqrt(2.0 / fan_in), rng));
  if (bias) this->bias = register_parameter("bias", Tensor::zeros({out}));
}

BatchNorm::BatchNorm(std::int64_t channels, Real momentum, Real eps) : momentum_(momentum), eps_(eps) {
  gamma = register_parameter("gamma", Tensor::full({channels}, Real{1}));
  beta = register_parameter("beta", Tensor::zeros({channels}));
  running_mean = register_buffer("running_mean", Tensor::zeros({channels}));
  running_var = register_buffer("running_var", Tensor::full({channels}, Real{1}));
}

Tensor BatchNorm::forward(const Tensor& x) {
  return ops::batch_norm(x, gamma, beta, running_mean, running_var, is_training(), momentum_, eps_);
}

Linear::Linear(std::int64_t in, std::int64_t out, bool bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = register_parameter("weight", uniform_tensor({out, in}, bound, rng));
  if (bias) this->bias = register_parameter("bias", uniform_tensor({out}, bound, rng));
}

ConvNormAct::ConvNormAct(std::int64_t in, std::int64_t out, Rng& rng)
    : conv(in, out, 3, 1, 1, false, rng), norm(out) {
  register_module("conv", conv);
  register_module("norm", norm);
}

Tensor ConvNormAct::forward(const Tensor& x) { return ops::relu(norm.forward(conv.forward(x))); }

MultiHeadAttention::MultiHeadAttention(std::int64_t dim, std::int64_t heads, Rng& rng)
    : q_proj(dim, dim, true, rng),
      k_proj(dim, dim, true, rng),
      v_proj(dim, dim, true, rng),
      out_proj(dim, dim, true, rng),
      dim_(dim),
      heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  }
  register_module("q_proj", q_proj);
  register_module("k_proj", k_proj);
  register_module("v_proj", v_proj);
  register_module("out_proj", out_proj);
}

Tensor MultiHeadAttention::forward(const Tensor& query, const Tensor& context, Tensor* weights) const {
  if (query.rank() != 3 || context.rank() != 3 || query.dim(0) != context.dim(0) ||
      query.dim(2) != dim_ || context.dim(2) != dim_) {
    throw ShapeMismatch("attention: query " + shape_str(query.shape()) + " context " +
                        shape_str(context.shape()));
  }
  const std::int64_t m = query.dim(0), tq = query.dim(1), tk = context.dim(1);
  const std::int64_t hd = dim_ / heads_;
  auto split = [&](const Tensor& t, std::int64_t len) {
    // [M, T, D] -> [M * H, T, hd]
    return ops::reshape(ops::permute(ops::reshape(t, {m, len, heads_, hd}), {0, 2, 1, 3}),
                        {m * heads_, len, hd});
  };
  Tensor q = split(q_proj.forward(query), tq);
  Tensor k = split(k_proj.forward(context), tk);
  Tensor v = split(v_proj.forward(context), tk);
  Tensor scores = ops::scale(ops::matmul(q, k, true), Real{1} / std::sqrt(static_cast<Real>(hd)));
  Tensor attn = ops::softmax(scores);
  if (weights) *weights = attn;
  Tensor mixed = ops::matmul(attn, v);
  Tensor merged = ops::reshape(ops::permute(ops::reshape(mixed, {m, heads_, tq, hd}), {0, 2, 1, 3}),
                               {m, tq, dim_});
  return out_proj.forward(merged);
}

}  // namespace dircr::nn
