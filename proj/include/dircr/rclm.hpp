#pragma once

// Rule-contrastive regularizer: row features of the most confident
// candidate's completed matrix are pulled together and pushed away from the
// third-row features of the other candidates.

#include <optional>
#include <span>
#include <vector>

#include "dircr/nn.hpp"

namespace dircr {

struct ProjectionConfig {
  int out_dim = 128;
  Real temperature = Real(0.2);
  Real confidence_threshold = Real(0.60);
  Real loss_weight = Real(0.1);

  void validate() const;
};

/// Index of the largest probability if it reaches `threshold`.
std::optional<int> pseudo_label(std::span<const Real> probs, Real threshold);

/// Two-layer MLP (in -> in -> out_dim, ReLU) followed by L2 normalization.
class Projector : public nn::Module {
 public:
  Projector(std::int64_t in, std::int64_t out_dim, Rng& rng);
  Tensor forward(const Tensor& x) const;
  /// MLP output before normalization.
  Tensor raw(const Tensor& x) const;

  nn::Linear fc1, fc2;
};

/// Per-sample loss for grouped unit vectors `vectors` [A, P + N, d] whose
/// first `n_positive` rows are positives: for each sample,
///   -sum_{p in P} log( sum_{u in P} e^{<p,u>/tau} / sum_{u in P+N} e^{<p,u>/tau} ).
/// Returns [A].
Tensor contrastive_loss_grouped(const Tensor& vectors, std::int64_t n_positive, Real temperature);

/// Single-set form. positives [P, d]; negatives [N, d] or undefined.
Tensor contrastive_loss(const Tensor& positives, const Tensor& negatives, Real temperature);

struct RclmResult {
  Tensor loss;              // scalar, weighted
  std::vector<int> labels;  // per sample, -1 when rejected
  int accepted = 0;
};

/// rows: [B * 8, 3, 3C] row features for every candidate completion;
/// probs: B * 8 candidate probabilities used for pseudo-labelling (treated
/// as constants). Loss = weight * mean over accepted samples, exactly zero
/// when none is accepted.
RclmResult rclm_step(const Tensor& rows, std::span<const Real> probs, const Projector& projector,
                     const ProjectionConfig& cfg);

}  // namespace dircr
