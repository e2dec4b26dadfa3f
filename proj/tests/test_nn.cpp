#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradcheck_cases.hpp"
#include "sqz/error.hpp"
#include "sqz/nn/adam.hpp"
#include "sqz/nn/checkpoint.hpp"

using namespace sqz;
using namespace sqz::nn;
using gradcases::random_tensor;

TEST(GradCheck, Linear) {
  const auto r = gradcases::linear();
  EXPECT_LE(r.params, 2000u);
  EXPECT_LT(r.max_rel_err, 1e-6);
}

TEST(GradCheck, ConvStack) { EXPECT_LT(gradcases::conv_stack().max_rel_err, 1e-6); }
TEST(GradCheck, Conv2d) { EXPECT_LT(gradcases::conv2d().max_rel_err, 1e-6); }
TEST(GradCheck, LayerNorm) { EXPECT_LT(gradcases::layer_norm().max_rel_err, 1e-5); }
TEST(GradCheck, TwoHeadAttention) { EXPECT_LT(gradcases::attention().max_rel_err, 1e-5); }
TEST(GradCheck, DitBlock) { EXPECT_LT(gradcases::dit_block().max_rel_err, 1e-4); }

TEST(GradCheck, FullDit) {
  const auto r = gradcases::dit_full();
  EXPECT_LE(r.params, 2000u);
  EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(GradCheck, PriorCnn) { EXPECT_LT(gradcases::prior_cnn().max_rel_err, 1e-4); }

TEST(GradCheck, SagPrior) {
  const auto r = gradcases::sag_prior();
  EXPECT_LE(r.params, 2000u);
  EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(GradCheck, RefineLoss) { EXPECT_LT(gradcases::refine_loss().max_rel_err, 1e-4); }

TEST(Linear, IdentityWeightIsIdentity) {
  Linear<double> lin("id", 4, 4);
  lin.set_identity();
  Rng rng(1);
  const auto x = random_tensor({3, 4}, rng);
  EXPECT_EQ(lin.forward(x).values(), x.values());
}

TEST(Linear, HalfSquaredNormGradientIsInput) {
  Linear<double> lin("id", 3, 3);
  lin.set_identity();
  Rng rng(2);
  const auto x = random_tensor({2, 3}, rng);
  Linear<double>::Cache c;
  const auto y = lin.forward(x, &c);
  const auto gx = lin.backward(y, c);  // d(sum y^2 / 2)/dy = y
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(gx[i], x[i]);
}

TEST(Linear, ShapeErrorNamesDimension) {
  Linear<float> lin("l", 3, 2);
  try {
    lin.forward(Tensor<float>::matrix(2, 5));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension 1"), std::string::npos);
  }
}

TEST(Linear, BackwardWithoutForwardIsStateError) {
  Linear<float> lin("l", 3, 2);
  Linear<float>::Cache c;
  EXPECT_THROW(lin.backward(Tensor<float>::matrix(1, 2), c), StateError);
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  LayerNorm<double> ln("ln", 5, false);
  const auto y = ln.forward(Tensor<double>::matrix(2, 5, 3.25));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, SoftmaxRowsSumToOne) {
  MultiHeadAttention<double> attn("a", 8, 2);
  Rng rng(3);
  attn.init(rng);
  MultiHeadAttention<double>::Cache c;
  attn.forward(random_tensor({4, 8}, rng), random_tensor({6, 8}, rng), &c);
  for (const auto& p : c.probs) {
    for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-6);
  }
}

TEST(Attention, PermutationEquivariantOverKeys) {
  MultiHeadAttention<double> attn("a", 4, 2);
  Rng rng(4);
  attn.init(rng);
  const auto q = random_tensor({2, 4}, rng);
  const auto kv = random_tensor({3, 4}, rng);
  Tensor<double> perm = kv;
  const std::size_t order[3] = {2, 0, 1};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) perm.at(r, c) = kv.at(order[r], c);
  }
  const auto a = attn.forward(q, kv);
  const auto b = attn.forward(q, perm);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(DitBlock, ZeroGatesMakeBranchesConstant) {
  models::DitBlock<double> block("b", 4, 2, 2);
  Rng rng(5);
  block.init(rng);
  ParamList<double> ps;
  block.collect(ps);
  zero_grads(ps);
  const auto x = random_tensor({3, 4}, rng);
  const auto cond = random_tensor({1, 4}, rng);
  models::DitBlock<double>::Cache c;
  const auto y = block.forward(x, cond, &c);
  EXPECT_EQ(y.values(), x.values());
  block.backward(random_tensor({3, 4}, rng), c);
  for (const auto* p : ps) {
    if (p->name.find(".ada") != std::string::npos) continue;
    for (std::size_t i = 0; i < p->grad.size(); ++i) ASSERT_EQ(p->grad[i], 0.0) << p->name;
  }
}

TEST(Dit, ForwardIsPureAndResidualInitReturnsCondition) {
  auto cfg = gradcases::tiny_dit_config();
  models::Dit<float> dit(cfg);
  Rng rng(6);
  dit.init(rng);
  Tensor<float> x = Tensor<float>::matrix(5, 3, 0.3f);
  Tensor<float> cond = Tensor<float>::matrix(5, 3, -1.5f);
  const auto a = dit.forward(x, {cond}, 2.0);
  const auto b = dit.forward(x, {cond}, 2.0);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_EQ(a.values(), cond.values());
  EXPECT_EQ(cfg.tokens_for(5), 3u);
}

TEST(PriorCnn, UntrainedReturnsInput) {
  models::PriorCnn<float> cnn({.bins = 80, .hidden = 16, .blocks = 2, .kernel = 5});
  Rng rng(7);
  cnn.init(rng);
  Tensor<float> x = Tensor<float>::matrix(9, 80);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(rng.normal());
  EXPECT_EQ(cnn.forward(x, 4.0).values(), x.values());
}

TEST(SagPrior, ZeroHeadGivesZeroPriorAndFramesPreserved) {
  models::SagPrior<float> sag({.sem_dim = 32, .bins = 80, .dim = 16, .depth = 6, .heads = 4, .mlp_ratio = 2});
  Rng rng(8);
  sag.init(rng);
  for (std::size_t frames : {1u, 7u}) {
    Tensor<float> sem = Tensor<float>::matrix(frames, 32, 0.2f);
    Tensor<float> mel = Tensor<float>::matrix(frames, 80, -0.4f);
    const auto out = sag.forward(sem, mel);
    EXPECT_EQ(out.prior.rows(), frames);
    EXPECT_EQ(out.prior.cols(), 80u);
    for (float v : out.prior.values()) EXPECT_EQ(v, 0.0f);
  }
  EXPECT_THROW(sag.forward(Tensor<float>::matrix(3, 32), Tensor<float>::matrix(4, 80)), DomainError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Param<double> p("p", {3});
  p.value[0] = 1.0;
  p.value[1] = -2.0;
  Adam<double> opt;
  const auto before = p.value.values();
  opt.step({&p});
  EXPECT_EQ(p.value.values(), before);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Param<double> p("p", {1});
  p.value[0] = 0.5;
  p.grad[0] = 1.0;
  Adam<double> opt({.lr = 0.1});
  opt.step({&p});
  // m_hat = 1, v_hat = 1 after bias correction.
  EXPECT_NEAR(p.value[0], 0.5 - 0.1 / (1.0 + 1e-8), 1e-12);
}

TEST(Adam, EqualGradientsMoveEqually) {
  Param<double> a("a", {1});
  Param<double> b("b", {1});
  a.grad[0] = b.grad[0] = 0.3;
  Adam<double> opt;
  for (int i = 0; i < 3; ++i) opt.step({&a, &b});
  EXPECT_EQ(a.value[0], b.value[0]);
}

TEST(Adam, ShapeMismatchIsShapeError) {
  Param<double> p("p", {2});
  p.grad = Tensor<double>({3});
  Adam<double> opt;
  EXPECT_THROW(opt.step({&p}), ShapeError);
}

TEST(Tensor, Invariants) {
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  Tensor<float> bad({1, 1});
  bad[0] = std::nanf("");
  EXPECT_THROW(check_finite(bad, "op"), StateError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto path = std::filesystem::temp_directory_path() / "sqz_test.ckpt";
  models::PriorCnn<float> cnn({.bins = 8, .hidden = 4, .blocks = 1, .kernel = 3});
  Rng rng(9);
  cnn.init(rng);
  ParamList<float> ps;
  cnn.collect(ps);
  for (auto* p : ps) {
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = static_cast<float>(rng.normal());
  }
  Checkpoint ck;
  ck.module_kind = "test";
  ck.hyperparams = {{"x", 1}};
  store_params(ck, ps, "cnn/");
  ck.save(path);

  models::PriorCnn<float> other({.bins = 8, .hidden = 4, .blocks = 1, .kernel = 3});
  ParamList<float> qs;
  other.collect(qs);
  const auto loaded = Checkpoint::load(path);
  EXPECT_EQ(loaded.module_kind, "test");
  EXPECT_EQ(loaded.hyperparams.at("x"), 1);
  restore_params(loaded, qs, "cnn/");
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps[i]->value.values(), qs[i]->value.values());

  models::PriorCnn<float> wrong({.bins = 8, .hidden = 5, .blocks = 1, .kernel = 3});
  ParamList<float> ws;
  wrong.collect(ws);
  EXPECT_THROW(restore_params(loaded, ws, "cnn/"), LoadError);

  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(-10, std::ios::end);
    f.put('\x7f');
  }
  EXPECT_THROW(Checkpoint::load(path), LoadError);
}
