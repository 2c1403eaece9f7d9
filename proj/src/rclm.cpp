#include "dircr/rclm.hpp"

#include <algorithm>

#include "dircr/errors.hpp"
#include "dircr/scoring.hpp"

namespace dircr {

void ProjectionConfig::validate() const {
  if (out_dim < 1) throw ConfigError("rclm.out_dim must be positive");
  if (!(temperature > 0)) throw ConfigError("rclm.temperature must be positive");
  if (!(confidence_threshold > Real(1) / kCandidates && confidence_threshold <= 1)) {
    throw ConfigError("rclm.confidence_threshold must lie in (1/8, 1]");
  }
  if (!(loss_weight >= 0)) throw ConfigError("rclm.loss_weight must be non-negative");
}

std::optional<int> pseudo_label(std::span<const Real> probs, Real threshold) {
  if (probs.empty()) return std::nullopt;
  auto it = std::max_element(probs.begin(), probs.end());
  if (*it < threshold) return std::nullopt;
  return static_cast<int>(it - probs.begin());
}

Projector::Projector(std::int64_t in, std::int64_t out_dim, Rng& rng)
    : fc1(in, in, true, rng), fc2(in, out_dim, true, rng) {
  register_module("fc1", fc1);
  register_module("fc2", fc2);
}

Tensor Projector::raw(const Tensor& x) const { return fc2.forward(ops::relu(fc1.forward(x))); }

Tensor Projector::forward(const Tensor& x) const { return ops::l2_normalize(raw(x)); }

Tensor contrastive_loss_grouped(const Tensor& vectors, std::int64_t n_positive, Real temperature) {
  if (vectors.rank() != 3 || n_positive < 1 || n_positive > vectors.dim(1)) {
    throw ShapeMismatch("contrastive loss: vectors " + shape_str(vectors.shape()) + " with " +
                        std::to_string(n_positive) + " positives");
  }
  Tensor anchors = ops::narrow(vectors, 1, 0, n_positive);
  Tensor sims = ops::exp(ops::scale(ops::matmul(anchors, vectors, true), Real(1) / temperature));
  Tensor num = ops::sum_dim(ops::narrow(sims, 2, 0, n_positive), 2);
  Tensor den = ops::sum_dim(sims, 2);
  return ops::sum_dim(ops::sub(ops::log(den), ops::log(num)), 1);
}

Tensor contrastive_loss(const Tensor& positives, const Tensor& negatives, Real temperature) {
  if (positives.rank() != 2) throw ShapeMismatch("positives must be [P, d]");
  const std::int64_t p = positives.dim(0), d = positives.dim(1);
  Tensor all = positives;
  if (negatives.defined() && negatives.numel() > 0) {
    if (negatives.rank() != 2 || negatives.dim(1) != d) throw ShapeMismatch("negatives must be [N, d]");
    all = ops::concat({positives, negatives}, 0);
  }
  return ops::sum(contrastive_loss_grouped(ops::reshape(all, {1, all.dim(0), d}), p, temperature));
}

RclmResult rclm_step(const Tensor& rows, std::span<const Real> probs, const Projector& projector,
                     const ProjectionConfig& cfg) {
  if (rows.rank() != 3 || rows.dim(1) != 3 || rows.dim(0) % kCandidates != 0 ||
      static_cast<std::int64_t>(probs.size()) != rows.dim(0)) {
    throw ShapeMismatch("rclm_step: rows " + shape_str(rows.shape()) + " with " +
                        std::to_string(probs.size()) + " probabilities");
  }
  const std::int64_t batch = rows.dim(0) / kCandidates;
  RclmResult res;
  std::vector<std::int64_t> gather;
  for (std::int64_t b = 0; b < batch; ++b) {
    auto label = pseudo_label(probs.subspan(b * kCandidates, kCandidates), cfg.confidence_threshold);
    res.labels.push_back(label ? *label : -1);
    if (!label) continue;
    ++res.accepted;
    const std::int64_t chosen = b * kCandidates + *label;
    for (int r = 0; r < 3; ++r) gather.push_back(chosen * 3 + r);
    for (int j = 0; j < kCandidates; ++j) {
      if (j != *label) gather.push_back((b * kCandidates + j) * 3 + 2);
    }
  }
  if (res.accepted == 0 || cfg.loss_weight == 0) {
    res.loss = Tensor::scalar(0);
    return res;
  }
  Tensor flat = ops::reshape(rows, {rows.dim(0) * 3, rows.dim(2)});
  Tensor z = projector.forward(ops::index_select(flat, gather));
  Tensor grouped = ops::reshape(z, {res.accepted, 3 + kCandidates - 1, z.dim(1)});
  Tensor per_sample = contrastive_loss_grouped(grouped, 3, cfg.temperature);
  res.loss = ops::scale(ops::mean(per_sample), cfg.loss_weight);
  return res;
}

}  // namespace dircr
