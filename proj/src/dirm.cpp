#include "dircr/dirm.hpp"

#include "dircr/errors.hpp"

namespace dircr {

using ops::concat;
using ops::narrow;
using ops::reshape;

void ReasoningState::check() const {
  if (!panels.defined() || panels.rank() != 4 || panels.dim(0) == 0 || panels.dim(0) % 9 != 0) {
    throw ShapeMismatch("reasoning state must be [M*9,C,h,w], got " +
                        (panels.defined() ? shape_str(panels.shape()) : std::string("undefined")));
  }
}

void DirmConfig::validate() const {
  if (channels < 1) throw ConfigError("channels must be positive");
  if (n_heads < 1 || attention_dim() % n_heads != 0) {
    throw ConfigError("attention dim " + std::to_string(attention_dim()) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  if (K < 1) throw ConfigError("K must be at least 1");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
  if (!use_local && !use_global) throw ConfigError("at least one of use_local/use_global is required");
}

LocalPredictor::LocalPredictor(std::int64_t channels, Rng& rng)
    : layer1(2 * channels, channels, rng), layer2(channels, channels, rng), channels_(channels) {
  register_module("layer1", layer1);
  register_module("layer2", layer2);
}

Tensor LocalPredictor::forward(const Tensor& f1, const Tensor& f2) {
  if (f1.shape() != f2.shape() || f1.rank() != 4 || f1.dim(1) != channels_) {
    throw ShapeMismatch("local predictor: " + shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
  }
  return forward_pair(concat({f1, f2}, 1));
}

Tensor LocalPredictor::forward_pair(const Tensor& pair) {
  if (pair.rank() != 4 || pair.dim(1) != 2 * channels_) {
    throw ShapeMismatch("local predictor: expected 2C channels, got " + shape_str(pair.shape()));
  }
  return layer2.forward(layer1.forward(pair));
}

GlobalPredictor::GlobalPredictor(std::int64_t channels, Rng& rng)
    : layer1(8 * channels, 2 * channels, rng), layer2(2 * channels, channels, rng), channels_(channels) {
  register_module("layer1", layer1);
  register_module("layer2", layer2);
}

Tensor GlobalPredictor::forward(const Tensor& context) {
  if (context.rank() != 4 || context.dim(1) != 8 * channels_) {
    throw ShapeMismatch("global predictor: expected 8C channels, got " + shape_str(context.shape()));
  }
  return layer2.forward(layer1.forward(context));
}

Tensor to_tokens(const Tensor& maps) {
  const std::int64_t n = maps.dim(0), d = maps.dim(1);
  return ops::permute(reshape(maps, {n, d, maps.dim(2) * maps.dim(3)}), {0, 2, 1});
}

Tensor from_tokens(const Tensor& tokens, std::int64_t height, std::int64_t width) {
  const std::int64_t n = tokens.dim(0), d = tokens.dim(2);
  if (tokens.dim(1) != height * width) {
    throw ShapeMismatch("from_tokens: " + shape_str(tokens.shape()) + " does not fold to " +
                        std::to_string(height) + "x" + std::to_string(width));
  }
  return reshape(ops::permute(tokens, {0, 2, 1}), {n, d, height, width});
}

AttentionLayer::AttentionLayer(std::int64_t dim, std::int64_t heads, Rng& rng) : attn(dim, heads, rng) {
  register_module("attn", attn);
}

Tensor AttentionLayer::forward(const Tensor& q, const Tensor& kv, Tensor* weights) const {
  return ops::add(q, attn.forward(q, kv, weights));
}

Fusion::Fusion(std::int64_t in_dim, std::int64_t dim, std::int64_t heads, Rng& rng)
    : embed(in_dim, dim, true, rng), cross(dim, heads, rng), self(dim, heads, rng) {
  register_module("embed", embed);
  register_module("cross", cross);
  register_module("self", self);
}

Tensor Fusion::forward(const Tensor& row_tokens, const Tensor& global_tokens, FusionTrace* trace) {
  auto record = [&](const Tensor& w) {
    if (trace) trace->weights.push_back(w);
  };
  Tensor w;
  auto row_mean = [](const Tensor& t) {
    const std::int64_t m = t.dim(0), len = t.dim(1) / 3;
    return ops::mean_dim(reshape(t, {m, 3, len, t.dim(2)}), 1);
  };

  Tensor mixed;
  if (row_tokens.defined() && global_tokens.defined()) {
    if (row_tokens.dim(0) != global_tokens.dim(0) || row_tokens.dim(1) != 3 * global_tokens.dim(1)) {
      throw ShapeMismatch("fusion: row tokens " + shape_str(row_tokens.shape()) + " global tokens " +
                          shape_str(global_tokens.shape()));
    }
    Tensor l = embed.forward(row_tokens);
    Tensor g = embed.forward(global_tokens);
    // Row queries yield 3T outputs; average the row groups to line up with
    // the T global positions.
    Tensor lg = row_mean(cross.forward(l, g, trace ? &w : nullptr));
    record(w);
    Tensor gl = cross.forward(g, l, trace ? &w : nullptr);
    record(w);
    mixed = ops::add(lg, gl);
  } else if (row_tokens.defined()) {
    if (row_tokens.dim(1) % 3 != 0) throw ShapeMismatch("fusion: row tokens not divisible into 3 rows");
    mixed = row_mean(embed.forward(row_tokens));
  } else if (global_tokens.defined()) {
    mixed = embed.forward(global_tokens);
  } else {
    throw ShapeMismatch("fusion: no input path");
  }
  Tensor out = self.forward(mixed, mixed, trace ? &w : nullptr);
  record(w);
  return out;
}

Gate::Gate(std::int64_t dim, Rng& rng) : proj(dim, dim, true, rng) { register_module("proj", proj); }

Tensor Gate::forward(const Tensor& tokens, Tensor* pre_activation) const {
  const std::int64_t m = tokens.dim(0), t = tokens.dim(1), d = tokens.dim(2);
  Tensor g = proj.forward(ops::mean_dim(tokens, 1));
  if (pre_activation) *pre_activation = g;
  Tensor factor = ops::expand(reshape(ops::gelu(g), {m, 1, d}), {m, t, d});
  return ops::mul(factor, tokens);
}

DirmBlock::DirmBlock(const DirmConfig& cfg, Rng& rng)
    : fusion(2 * cfg.channels, cfg.attention_dim(), cfg.n_heads, rng),
      gate(cfg.attention_dim(), rng),
      project(cfg.channels + cfg.attention_dim(), cfg.channels, 1, 1, 0, true, rng),
      cfg_(cfg) {
  cfg_.validate();
  if (cfg_.use_local) {
    local = std::make_unique<LocalPredictor>(cfg_.channels, rng);
    register_module("local", *local);
  }
  if (cfg_.use_global) {
    global = std::make_unique<GlobalPredictor>(cfg_.channels, rng);
    register_module("global", *global);
  }
  register_module("fusion", fusion);
  register_module("gate", gate);
  register_module("project", project);
}

LocalResidual DirmBlock::local_residual(const ReasoningState& s) {
  s.check();
  if (!local) throw ConfigError("local path is disabled");
  const std::int64_t c = s.channels();
  if (c != cfg_.channels) throw ShapeMismatch("state channels differ from block channels");
  // [M*9, C, h, w] -> [M*3, 3C, h, w]: each row's panels become channel groups.
  Tensor rows = reshape(s.panels, {s.states() * 3, 3 * c, s.height(), s.width()});
  Tensor actual = narrow(rows, 1, 2 * c, c);
  Tensor errors = ops::sub(local->forward_pair(narrow(rows, 1, 0, 2 * c)), actual);
  return {errors, concat({actual, errors}, 1)};
}

GlobalResidual DirmBlock::global_residual(const ReasoningState& s) {
  s.check();
  if (!global) throw ConfigError("global path is disabled");
  const std::int64_t c = s.channels();
  if (c != cfg_.channels) throw ShapeMismatch("state channels differ from block channels");
  Tensor all = reshape(s.panels, {s.states(), 9 * c, s.height(), s.width()});
  Tensor candidate = narrow(all, 1, 8 * c, c);
  Tensor errors = ops::sub(global->forward(narrow(all, 1, 0, 8 * c)), candidate);
  return {errors, concat({candidate, errors}, 1)};
}

ReasoningState DirmBlock::forward(const ReasoningState& s, Rng& dropout_rng, DirmTrace* trace) {
  s.check();
  const std::int64_t m = s.states(), h = s.height(), w = s.width();
  const std::int64_t d = cfg_.attention_dim();

  Tensor row_tokens, global_tokens;
  if (local) {
    LocalResidual lr = local_residual(s);
    // [M*3, hw, 2C] -> [M, 3hw, 2C]
    Tensor t = to_tokens(lr.combined);
    row_tokens = reshape(t, {m, 3 * h * w, t.dim(2)});
    if (trace) trace->local = lr;
  }
  if (global) {
    GlobalResidual gr = global_residual(s);
    global_tokens = to_tokens(gr.combined);
    if (trace) trace->global = gr;
  }

  Tensor fused = fusion.forward(row_tokens, global_tokens, trace ? &trace->fusion : nullptr);
  fused = ops::dropout(fused, cfg_.dropout, is_training(), dropout_rng);
  Tensor g;
  Tensor gated = gate.forward(fused, trace ? &g : nullptr);
  if (trace) {
    trace->fused = fused;
    trace->gate = g;
    trace->gated = gated;
  }

  // Re-fold R onto the spatial grid, share it with all nine panels, and
  // project each panel's (features, R) back to C channels.
  Tensor grid = reshape(from_tokens(gated, h, w), {m, 1, d, h * w});
  Tensor shared = reshape(ops::expand(grid, {m, 9, d, h * w}), {m * 9, d, h, w});
  return {project.forward(concat({s.panels, shared}, 1))};
}

Tensor row_features(const ReasoningState& s) {
  const std::int64_t m = s.states(), c = s.channels();
  Tensor spatial = ops::mean_dim(reshape(s.panels, {m * 9, c, s.height() * s.width()}), 2);
  return reshape(spatial, {m, 3, 3 * c});
}

Tensor pooled_features(const ReasoningState& s) {
  const std::int64_t m = s.states(), c = s.channels();
  Tensor spatial = ops::mean_dim(reshape(s.panels, {m * 9, c, s.height() * s.width()}), 2);
  return ops::mean_dim(reshape(spatial, {m, 9, c}), 1);
}

DirmStack::DirmStack(const DirmConfig& cfg, Rng& rng) {
  cfg.validate();
  for (int k = 0; k < cfg.K; ++k) {
    blocks.push_back(std::make_unique<DirmBlock>(cfg, rng));
    register_module("block" + std::to_string(k), *blocks.back());
  }
}

StackOutput DirmStack::forward(const ReasoningState& s, Rng& dropout_rng) {
  ReasoningState cur = s;
  for (auto& b : blocks) cur = b->forward(cur, dropout_rng);
  return {cur, row_features(cur), pooled_features(cur)};
}

}  // namespace dircr
