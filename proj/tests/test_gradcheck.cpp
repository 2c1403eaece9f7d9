// Central-difference checks of every differentiable component on toy
// configurations. Built twice: in float with step 1e-3 and tolerance 1e-3,
// and in double with step 1e-5 and tolerance 1e-6.

#include <gtest/gtest.h>

#include "dircr/dirm.hpp"
#include "dircr/encoder.hpp"
#include "dircr/model.hpp"
#include "dircr/rclm.hpp"
#include "dircr/scoring.hpp"
#include "test_util.hpp"

using namespace dircr;
using dircr::testing::grad_check;
using dircr::testing::GradCheck;
using dircr::testing::probe;
using dircr::testing::random_tensor;

namespace {

#ifdef DIRCR_DOUBLE
constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-6;
#else
constexpr double kStep = 1e-3;
constexpr double kTolerance = 1e-3;
#endif
constexpr int kPerTensor = 12;

using Inputs = std::vector<std::pair<std::string, Tensor>>;

Inputs with_parameters(const nn::Module& m, Inputs extra = {}) {
  for (auto& p : m.named_parameters()) extra.emplace_back(p.name, p.tensor);
  return extra;
}

void expect_close(const GradCheck& r) {
  EXPECT_GT(r.checked, 0);
  EXPECT_LE(r.max_error, kTolerance) << "worst: " << r.worst;
  // Kinks are rare on random inputs; many of them would hide real errors.
  EXPECT_LE(r.nonsmooth * 10, r.checked) << r.nonsmooth << " non-smooth of " << r.checked;
}

DirmConfig toy_dirm(bool local = true, bool global = true) {
  DirmConfig c;
  c.channels = 4;
  c.n_heads = 2;
  c.K = 1;
  c.dropout = 0;
  c.use_local = local;
  c.use_global = global;
  return c;
}

}  // namespace

TEST(GradCheck, ResidualBlock) {
  Rng rng(1);
  ResidualBlock block(2, 4, 2, rng);
  Tensor x = random_tensor({3, 2, 6, 6}, rng);
  expect_close(grad_check([&] { return probe(block.forward(x)); }, with_parameters(block, {{"x", x}}), kStep,
                          kPerTensor));
}

TEST(GradCheck, Encoder) {
  Rng rng(2);
  EncoderConfig cfg;
  cfg.in_size = 8;
  cfg.channels = 4;
  cfg.n_blocks = 2;
  Encoder enc(cfg, rng);
  Tensor x = dircr::testing::uniform_tensor({4, 1, 8, 8}, rng, 0, 1);
  expect_close(
      grad_check([&] { return probe(enc.forward(x)); }, with_parameters(enc, {{"x", x}}), kStep, kPerTensor));
}

TEST(GradCheck, LocalPredictor) {
  Rng rng(3);
  LocalPredictor psi(4, rng);
  Tensor f1 = random_tensor({3, 4, 3, 3}, rng), f2 = random_tensor({3, 4, 3, 3}, rng);
  expect_close(grad_check([&] { return probe(psi.forward(f1, f2)); },
                          with_parameters(psi, {{"f1", f1}, {"f2", f2}}), kStep, kPerTensor));
}

TEST(GradCheck, GlobalPredictor) {
  Rng rng(4);
  GlobalPredictor psi(4, rng);
  Tensor ctx = random_tensor({2, 32, 3, 3}, rng);
  expect_close(grad_check([&] { return probe(psi.forward(ctx)); }, with_parameters(psi, {{"context", ctx}}), kStep,
                          kPerTensor));
}

TEST(GradCheck, FusionAttention) {
  Rng rng(5);
  Fusion fusion(8, 4, 2, rng);
  Tensor rows = random_tensor({2, 12, 8}, rng), glob = random_tensor({2, 4, 8}, rng);
  expect_close(grad_check([&] { return probe(fusion.forward(rows, glob)); },
                          with_parameters(fusion, {{"rows", rows}, {"global", glob}}), kStep, kPerTensor));
}

TEST(GradCheck, FusionSinglePath) {
  Rng rng(6);
  Fusion fusion(8, 4, 2, rng);
  Tensor rows = random_tensor({2, 12, 8}, rng), glob = random_tensor({2, 4, 8}, rng);
  expect_close(grad_check([&] { return probe(fusion.forward(rows, Tensor())); },
                          with_parameters(fusion, {{"rows", rows}}), kStep, kPerTensor));
  expect_close(grad_check([&] { return probe(fusion.forward(Tensor(), glob)); },
                          with_parameters(fusion, {{"global", glob}}), kStep, kPerTensor));
}

TEST(GradCheck, Gate) {
  Rng rng(7);
  Gate gate(4, rng);
  Tensor o = random_tensor({2, 5, 4}, rng);
  expect_close(
      grad_check([&] { return probe(gate.forward(o)); }, with_parameters(gate, {{"tokens", o}}), kStep, kPerTensor));
}

TEST(GradCheck, DirmBlockEndToEnd) {
  Rng rng(8);
  for (auto [local, global] : {std::pair{true, true}, {true, false}, {false, true}}) {
    DirmBlock block(toy_dirm(local, global), rng);
    Tensor x = random_tensor({18, 4, 2, 2}, rng);
    Rng drop(0);
    expect_close(grad_check([&] { return probe(block.forward(ReasoningState{x}, drop).panels); },
                            with_parameters(block, {{"state", x}}), kStep, kPerTensor));
  }
}

TEST(GradCheck, DirmStackRowFeatures) {
  Rng rng(9);
  DirmConfig cfg = toy_dirm();
  cfg.K = 2;
  DirmStack stack(cfg, rng);
  Tensor x = random_tensor({18, 4, 2, 2}, rng);
  Rng drop(0);
  expect_close(grad_check(
      [&] {
        StackOutput out = stack.forward(ReasoningState{x}, drop);
        return ops::add(probe(out.rows, 1), probe(out.pooled, 2));
      },
      with_parameters(stack, {{"state", x}}), kStep, 6));
}

TEST(GradCheck, ProjectionMlp) {
  Rng rng(10);
  Projector proj(6, 5, rng);
  Tensor x = random_tensor({4, 6}, rng);
  expect_close(
      grad_check([&] { return probe(proj.forward(x)); }, with_parameters(proj, {{"x", x}}), kStep, kPerTensor));
}

TEST(GradCheck, ContrastiveLoss) {
  Rng rng(11);
  Tensor raw = random_tensor({3, 10, 6}, rng);
  expect_close(grad_check(
      [&] {
        Tensor unit = ops::reshape(ops::l2_normalize(ops::reshape(raw, {30, 6})), {3, 10, 6});
        return ops::sum(contrastive_loss_grouped(unit, 3, Real(0.2)));
      },
      {{"vectors", raw}}, kStep, 40));
}

TEST(GradCheck, ClassificationLoss) {
  Rng rng(12);
  Tensor logits = random_tensor({4, 8}, rng, 2.0);
  std::vector<int> answers{0, 7, 3, 3};
  expect_close(grad_check([&] { return classification_loss(logits, answers); }, {{"logits", logits}}, kStep, 32));
}

TEST(GradCheck, ScoringHead) {
  Rng rng(13);
  ScoringHead head(4, 0, rng);
  Tensor pooled = random_tensor({16, 4}, rng);
  std::vector<int> answers{2, 5};
  Rng drop(0);
  expect_close(grad_check([&] { return classification_loss(head.forward(pooled, drop), answers); },
                          with_parameters(head, {{"pooled", pooled}}), kStep, kPerTensor));
}

TEST(GradCheck, RclmStep) {
  Rng rng(14);
  Projector proj(6, 5, rng);
  ProjectionConfig cfg;
  cfg.out_dim = 5;
  Tensor rows = random_tensor({16, 3, 6}, rng);
  std::vector<Real> probs(16, Real(0.1) / 7);
  probs[3] = Real(0.9);   // sample 0 accepted
  for (int j = 8; j < 16; ++j) probs[j] = Real(0.125);  // sample 1 rejected
  expect_close(grad_check([&] { return rclm_step(rows, probs, proj, cfg).loss; },
                          with_parameters(proj, {{"rows", rows}}), kStep, kPerTensor));
}

TEST(GradCheck, WholeModel) {
  ModelConfig cfg;
  cfg.image_size = 8;
  cfg.channels = 4;
  cfg.n_blocks = 2;
  cfg.n_heads = 2;
  cfg.K = 1;
  cfg.dropout = 0;
  cfg.projection_dim = 5;
  DircrModel model(cfg, 15);
  Rng rng(15);
  Tensor panels = dircr::testing::uniform_tensor({32, 1, 8, 8}, rng, 0, 1);
  std::vector<int> answers{1, 6};
  Inputs params;
  for (auto& p : model.named_parameters()) {
    if (p.name.rfind("projector", 0) != 0) params.emplace_back(p.name, p.tensor);
  }
  expect_close(grad_check([&] { return classification_loss(model.forward(panels).logits, answers); }, params,
                          kStep, 4));
}
