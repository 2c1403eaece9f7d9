#pragma once

#include <span>
#include <vector>

#include "dircr/dirm.hpp"
#include "dircr/encoder.hpp"
#include "dircr/puzzle.hpp"
#include "dircr/rclm.hpp"
#include "dircr/scoring.hpp"

namespace dircr {

struct ModelConfig {
  int image_size = 80;
  int channels = 64;
  int n_blocks = 4;
  int n_heads = 4;
  int K = 3;
  Real dropout = Real(0.1);
  bool use_local = true;
  bool use_global = true;
  int projection_dim = 128;

  EncoderConfig encoder() const;
  DirmConfig dirm() const;
  void validate() const;
};

struct ModelOutput {
  Tensor logits;  // [B, 8]
  Tensor rows;    // [B * 8, 3, 3C] row features per candidate completion
};

/// Encoder, reasoning stack, scoring head and contrastive projector.
class DircrModel : public nn::Module {
 public:
  DircrModel(const ModelConfig& cfg, std::uint64_t seed);

  /// panels: [B * 16, 1, H, W], per puzzle the 8 context panels then the 8
  /// candidates, values in [0, 1].
  ModelOutput forward(const Tensor& panels);

  const ModelConfig& config() const { return cfg_; }
  Rng& dropout_rng() { return dropout_rng_; }

 private:
  ModelConfig cfg_;
  Rng init_rng_;

 public:
  Encoder encoder;
  DirmStack stack;
  ScoringHead head;
  Projector projector;

 private:
  Rng dropout_rng_;
};

/// Stacks the panels of `puzzles[order[i]]` into [B * 16, 1, H, W], mapping
/// pixel p to (255 - p) / 255 so that ink is bright on a zero background.
Tensor panel_batch(std::span<const puzzle::Puzzle> puzzles, std::span<const std::int64_t> order);
Tensor panel_batch(std::span<const puzzle::Puzzle> puzzles);

}  // namespace dircr
