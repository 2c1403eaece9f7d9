#include "dircr/model.hpp"

#include <numeric>

#include "dircr/errors.hpp"

namespace dircr {

EncoderConfig ModelConfig::encoder() const {
  EncoderConfig e;
  e.in_size = image_size;
  e.channels = channels;
  e.n_blocks = n_blocks;
  return e;
}

DirmConfig ModelConfig::dirm() const {
  DirmConfig d;
  d.channels = channels;
  d.n_heads = n_heads;
  d.K = K;
  d.dropout = dropout;
  d.use_local = use_local;
  d.use_global = use_global;
  return d;
}

void ModelConfig::validate() const {
  encoder().validate();
  dirm().validate();
  if (projection_dim < 1) throw ConfigError("projection dim must be positive");
}

DircrModel::DircrModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      init_rng_(mix_seed(seed, 0)),
      encoder(cfg_.encoder(), init_rng_),
      stack(cfg_.dirm(), init_rng_),
      head(cfg_.channels, cfg_.dropout, init_rng_),
      projector(3 * cfg_.channels, cfg_.projection_dim, init_rng_),
      dropout_rng_(mix_seed(seed, 1)) {
  register_module("encoder", encoder);
  register_module("stack", stack);
  register_module("head", head);
  register_module("projector", projector);
}

ModelOutput DircrModel::forward(const Tensor& panels) {
  if (panels.rank() != 4 || panels.dim(0) % 16 != 0 || panels.dim(0) == 0) {
    throw ShapeMismatch("model expects [B*16,1,H,W], got " + shape_str(panels.shape()));
  }
  const std::int64_t batch = panels.dim(0) / 16;
  Tensor feats = encoder.forward(panels);
  // One state per (puzzle, candidate): the 8 context panels then the candidate.
  std::vector<std::int64_t> index;
  index.reserve(batch * kCandidates * 9);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (int j = 0; j < kCandidates; ++j) {
      for (int i = 0; i < 8; ++i) index.push_back(b * 16 + i);
      index.push_back(b * 16 + 8 + j);
    }
  }
  ReasoningState state{ops::index_select(feats, index)};
  StackOutput out = stack.forward(state, dropout_rng_);
  return {head.forward(out.pooled, dropout_rng_), out.rows};
}

Tensor panel_batch(std::span<const puzzle::Puzzle> puzzles, std::span<const std::int64_t> order) {
  if (order.empty()) throw EmptyDataset("panel_batch: empty batch");
  const int size = puzzles[order[0]].image_size;
  const std::int64_t px = std::int64_t(size) * size;
  std::vector<Real> values(order.size() * 16 * px);
  Real* dst = values.data();
  for (std::int64_t idx : order) {
    const auto& p = puzzles[idx];
    if (p.image_size != size) throw ShapeMismatch("panel_batch: mixed image sizes");
    auto put = [&](const puzzle::Image& img) {
      for (std::int64_t k = 0; k < px; ++k) dst[k] = Real(255 - img[k]) / Real(255);
      dst += px;
    };
    for (const auto& img : p.context) put(img);
    for (const auto& img : p.candidates) put(img);
  }
  return Tensor::from_vector({std::int64_t(order.size()) * 16, 1, size, size}, std::move(values));
}

Tensor panel_batch(std::span<const puzzle::Puzzle> puzzles) {
  std::vector<std::int64_t> order(puzzles.size());
  std::iota(order.begin(), order.end(), 0);
  return panel_batch(puzzles, order);
}

}  // namespace dircr
