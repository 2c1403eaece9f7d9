#include "dircr/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "dircr/errors.hpp"

namespace dircr {

ScoringHead::ScoringHead(std::int64_t channels, Real dropout, Rng& rng)
    : hidden(channels, channels, true, rng), out(channels, 1, true, rng), dropout_(dropout) {
  register_module("hidden", hidden);
  register_module("out", out);
}

Tensor ScoringHead::forward(const Tensor& pooled, Rng& dropout_rng) {
  if (pooled.rank() != 2 || pooled.dim(0) % kCandidates != 0) {
    throw ShapeMismatch("scoring head expects [B*8, C], got " + shape_str(pooled.shape()));
  }
  Tensor h = ops::dropout(ops::relu(hidden.forward(pooled)), dropout_, is_training(), dropout_rng);
  return ops::reshape(out.forward(h), {pooled.dim(0) / kCandidates, kCandidates});
}

int CandidateScores::argmax() const {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

CandidateScores candidate_scores(const Tensor& logits, std::int64_t b) {
  if (logits.rank() != 2 || b < 0 || b >= logits.dim(0)) {
    throw IndexOutOfRange("candidate_scores: row " + std::to_string(b));
  }
  const std::int64_t n = logits.dim(1);
  const Real* row = logits.data().data() + b * n;
  CandidateScores s;
  s.logits.assign(row, row + n);
  const double top = *std::max_element(row, row + n);
  double total = 0;
  std::vector<double> e(n);
  for (std::int64_t j = 0; j < n; ++j) total += e[j] = std::exp(double(row[j]) - top);
  for (std::int64_t j = 0; j < n; ++j) s.probs.push_back(static_cast<Real>(e[j] / total));
  return s;
}

std::vector<CandidateScores> candidate_scores(const Tensor& logits) {
  std::vector<CandidateScores> out;
  for (std::int64_t b = 0; b < logits.dim(0); ++b) out.push_back(candidate_scores(logits, b));
  return out;
}

int count_correct(const Tensor& logits, std::span<const int> answers) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(answers.size())) {
    throw ShapeMismatch("count_correct: logits " + shape_str(logits.shape()) + " for " +
                        std::to_string(answers.size()) + " answers");
  }
  int correct = 0;
  for (std::size_t b = 0; b < answers.size(); ++b) {
    if (candidate_scores(logits, b).argmax() == answers[b]) ++correct;
  }
  return correct;
}

Tensor classification_loss(const Tensor& logits, std::span<const int> answers) {
  for (int a : answers) {
    if (a < 0 || a >= logits.dim(-1)) throw IndexOutOfRange("answer index " + std::to_string(a));
  }
  return ops::cross_entropy(logits, answers);
}

}  // namespace dircr
