#pragma once

// Dual-path reasoning block. A batch of reasoning states is stored as one
// feature tensor [M * 9, C, h, w]: for state m, panels 9m..9m+7 are the
// context and panel 9m+8 is the candidate filling the missing slot.

#include <memory>
#include <vector>

#include "dircr/nn.hpp"

namespace dircr {

struct ReasoningState {
  Tensor panels;  // [M * 9, C, h, w]

  std::int64_t states() const { return panels.dim(0) / 9; }
  std::int64_t channels() const { return panels.dim(1); }
  std::int64_t height() const { return panels.dim(2); }
  std::int64_t width() const { return panels.dim(3); }
  /// Throws ShapeMismatch unless panels is rank 4 with a multiple of 9 rows.
  void check() const;
};

struct DirmConfig {
  int channels = 64;
  int attn_dim = 0;  // 0 means `channels`
  int n_heads = 4;
  int K = 3;
  Real dropout = Real(0.1);
  bool use_local = true;
  bool use_global = true;

  int attention_dim() const { return attn_dim > 0 ? attn_dim : channels; }
  void validate() const;
};

/// Row-wise predictor: third panel of a row from the first two.
class LocalPredictor : public nn::Module {
 public:
  LocalPredictor(std::int64_t channels, Rng& rng);
  /// f1, f2: [N, C, h, w] -> [N, C, h, w].
  Tensor forward(const Tensor& f1, const Tensor& f2);
  /// Same, with f1 and f2 already channel-concatenated: [N, 2C, h, w].
  Tensor forward_pair(const Tensor& pair);

  nn::ConvNormAct layer1, layer2;

 private:
  std::int64_t channels_;
};

/// Predicts the missing panel from all eight context panels, concatenated
/// positionally along channels.
class GlobalPredictor : public nn::Module {
 public:
  GlobalPredictor(std::int64_t channels, Rng& rng);
  /// context: [N, 8C, h, w] -> [N, C, h, w].
  Tensor forward(const Tensor& context);

  nn::ConvNormAct layer1, layer2;

 private:
  std::int64_t channels_;
};

struct LocalResidual {
  Tensor errors;    // [M * 3, C, h, w], predicted minus actual
  Tensor combined;  // [M * 3, 2C, h, w], (actual third panel, error)
};

struct GlobalResidual {
  Tensor errors;    // [M, C, h, w]
  Tensor combined;  // [M, 2C, h, w], (candidate, error)
};

/// Feature maps [N, D, h, w] -> tokens [N, h*w, D] and back.
Tensor to_tokens(const Tensor& maps);
Tensor from_tokens(const Tensor& tokens, std::int64_t height, std::int64_t width);

/// One attention layer with a residual connection: q + MHA(q, kv).
class AttentionLayer : public nn::Module {
 public:
  AttentionLayer(std::int64_t dim, std::int64_t heads, Rng& rng);
  Tensor forward(const Tensor& q, const Tensor& kv, Tensor* weights = nullptr) const;

  nn::MultiHeadAttention attn;
};

struct FusionTrace {
  std::vector<Tensor> weights;  // attention matrices of every layer applied
};

/// Bidirectional cross-attention between row tokens and global tokens,
/// summed and passed through self-attention. Both cross directions share
/// one parameter set.
class Fusion : public nn::Module {
 public:
  Fusion(std::int64_t in_dim, std::int64_t dim, std::int64_t heads, Rng& rng);

  /// row_tokens [M, 3T, 2C] (three row groups of T tokens), global_tokens
  /// [M, T, 2C] -> [M, T, D]. Either input may be undefined to ablate its path.
  Tensor forward(const Tensor& row_tokens, const Tensor& global_tokens, FusionTrace* trace = nullptr);

  nn::Linear embed;
  AttentionLayer cross, self;
};

/// Channel gate: R = GELU(W mean_t(O) + b) * O.
class Gate : public nn::Module {
 public:
  Gate(std::int64_t dim, Rng& rng);
  /// tokens [M, T, D] -> [M, T, D]. `pre_activation` receives g [M, D].
  Tensor forward(const Tensor& tokens, Tensor* pre_activation = nullptr) const;

  nn::Linear proj;
};

struct DirmTrace {
  LocalResidual local;
  GlobalResidual global;
  FusionTrace fusion;
  Tensor fused;  // O
  Tensor gate;   // g
  Tensor gated;  // R
};

class DirmBlock : public nn::Module {
 public:
  DirmBlock(const DirmConfig& cfg, Rng& rng);

  LocalResidual local_residual(const ReasoningState& s);
  GlobalResidual global_residual(const ReasoningState& s);
  ReasoningState forward(const ReasoningState& s, Rng& dropout_rng, DirmTrace* trace = nullptr);

  const DirmConfig& config() const { return cfg_; }

  std::unique_ptr<LocalPredictor> local;
  std::unique_ptr<GlobalPredictor> global;
  Fusion fusion;
  Gate gate;
  nn::Conv2d project;  // 1x1, (C + D) -> C

 private:
  DirmConfig cfg_;
};

struct StackOutput {
  ReasoningState state;
  Tensor rows;    // [M, 3, 3C] spatially pooled row features
  Tensor pooled;  // [M, C] mean over all nine panels
};

/// Row features and the pooled vector of a state.
Tensor row_features(const ReasoningState& s);
Tensor pooled_features(const ReasoningState& s);

class DirmStack : public nn::Module {
 public:
  DirmStack(const DirmConfig& cfg, Rng& rng);
  StackOutput forward(const ReasoningState& s, Rng& dropout_rng);

  std::vector<std::unique_ptr<DirmBlock>> blocks;
};

}  // namespace dircr
