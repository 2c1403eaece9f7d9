#pragma once

#include <span>
#include <vector>

#include "dircr/nn.hpp"

namespace dircr {

inline constexpr int kCandidates = 8;

/// Shared two-layer MLP mapping each candidate's pooled vector to a logit.
class ScoringHead : public nn::Module {
 public:
  ScoringHead(std::int64_t channels, Real dropout, Rng& rng);
  /// pooled [B * 8, C] -> logits [B, 8].
  Tensor forward(const Tensor& pooled, Rng& dropout_rng);

  nn::Linear hidden, out;

 private:
  Real dropout_;
};

struct CandidateScores {
  std::vector<Real> logits;
  std::vector<Real> probs;

  int argmax() const;
};

/// Row `b` of a logits tensor [B, 8], with softmax probabilities computed
/// in double precision.
CandidateScores candidate_scores(const Tensor& logits, std::int64_t b);
std::vector<CandidateScores> candidate_scores(const Tensor& logits);

/// Rows of `logits` [B, 8] whose top-scoring candidate equals the answer.
int count_correct(const Tensor& logits, std::span<const int> answers);

/// Mean cross-entropy of the answers; throws IndexOutOfRange for an answer
/// outside 0..7.
Tensor classification_loss(const Tensor& logits, std::span<const int> answers);

}  // namespace dircr
