#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mer/error.hpp"
#include "mer/gradcheck.hpp"
#include "mer/losses.hpp"
#include "mer/ops.hpp"
#include "support.hpp"

namespace mer {
namespace {

using testing::kFdStep;
using testing::randn;

Tensor probs(std::size_t n, std::size_t k, std::uint64_t seed, float spread = 1.5f) {
  return softmax_temperature(randn({n, k}, seed, spread), 1.0f);
}

TEST(FocalLoss, GammaZeroIsCrossEntropy) {
  LossConfig cfg;
  cfg.gamma_focal = 0.0f;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Tensor q = probs(6, 4, s);
    std::vector<int> y{0, 1, 2, 3, 1, 2};
    double ce = 0.0;
    for (std::size_t r = 0; r < 6; ++r) ce -= std::log(static_cast<double>(q[r * 4 + y[r]]));
    EXPECT_NEAR(focal_loss(q, y, cfg).item(), ce / 6.0, 1e-6);
  }
}

TEST(FocalLoss, WorkedExample) {
  LossConfig cfg;
  const std::vector<int> y{0};
  EXPECT_NEAR(focal_loss(Tensor({1, 2}, {0.9f, 0.1f}), y, cfg).item(), 0.0010536, 1e-6);
  EXPECT_NEAR(focal_loss(Tensor({1, 2}, {1.0f, 0.0f}), y, cfg).item(), 0.0, 1e-9);
}

TEST(FocalLoss, ClassWeightScales) {
  LossConfig cfg;
  cfg.class_weights = {3.0f, 1.0f};
  const std::vector<int> y{0};
  EXPECT_NEAR(focal_loss(Tensor({1, 2}, {0.9f, 0.1f}), y, cfg).item(), 3 * 0.0010536, 3e-6);
}

TEST(FocalLoss, PermutationEquivariant) {
  LossConfig cfg;
  cfg.class_weights = {0.5f, 1.0f, 1.5f};
  Tensor q = probs(5, 3, 7);
  std::vector<int> y{0, 1, 2, 2, 0};
  const int perm[3] = {2, 0, 1};
  std::vector<float> qp(15);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t k = 0; k < 3; ++k) qp[r * 3 + perm[k]] = q[r * 3 + k];
  std::vector<int> yp;
  for (int v : y) yp.push_back(perm[v]);
  LossConfig cp = cfg;
  for (std::size_t k = 0; k < 3; ++k) cp.class_weights[perm[k]] = cfg.class_weights[k];
  EXPECT_NEAR(focal_loss(q, y, cfg).item(), focal_loss(Tensor({5, 3}, qp), yp, cp).item(), 1e-7);
}

TEST(FocalLoss, Errors) {
  LossConfig cfg;
  Tensor q = probs(2, 3, 1);
  EXPECT_THROW(focal_loss(q, std::vector<int>{0, 3}, cfg), ContractError);
  EXPECT_THROW(focal_loss(q, std::vector<int>{0, -1}, cfg), ContractError);
  EXPECT_THROW(focal_loss(Tensor({1, 2}, {0.5f, 0.6f}), std::vector<int>{0}, cfg), ContractError);
  cfg.class_weights = {1.0f, 1.0f};
  EXPECT_THROW(focal_loss(q, std::vector<int>{0, 1}, cfg), DimensionError);
}

TEST(FocalLoss, Gradient) {
  for (float gamma : {0.0f, 2.0f}) {
    LossConfig cfg;
    cfg.gamma_focal = gamma;
    cfg.class_weights = {0.7f, 1.1f, 1.2f};
    Tensor z = randn({4, 3}, 11);
    std::vector<int> y{0, 2, 1, 2};
    auto rep = finite_difference_check([&](const Tensor& v) { return focal_loss(softmax_temperature(v, 1.0f), y, cfg); },
                                       z, kFdStep, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_rel_err;
  }
}

TEST(KlLoss, Examples) {
  Tensor q = probs(3, 4, 21);
  EXPECT_EQ(kl_distill_loss(q, q, 1.0f).item(), 0.0f);
  EXPECT_EQ(kl_distill_loss(q, q, 3.0f).item(), 0.0f);
  Tensor teacher({1, 2}, {0.8f, 0.2f}), student({1, 2}, {0.5f, 0.5f});
  const double t1 = kl_distill_loss(student, teacher, 1.0f).item();
  EXPECT_NEAR(t1, 0.8 * std::log(1.6) + 0.2 * std::log(0.4), 1e-5);
  EXPECT_NEAR(kl_distill_loss(student, teacher, 3.0f).item(), 9.0 * t1, 1e-6);
  EXPECT_THROW(kl_distill_loss(student, teacher, 0.0f), ParameterError);
  EXPECT_THROW(kl_distill_loss(student, Tensor({1, 2}, {0.8f, 0.3f}), 1.0f), ContractError);
  EXPECT_THROW(kl_distill_loss(student, probs(1, 3, 1), 1.0f), DimensionError);
}

TEST(KlLoss, NonNegative) {
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_GE(kl_distill_loss(probs(3, 5, s), probs(3, 5, s + 100), 2.0f).item(), 0.0f);
}

TEST(KlLoss, GradientReachesStudentOnly) {
  Tensor zt = randn({3, 4}, 31);
  Tensor zs = randn({3, 4}, 32);
  auto rep = finite_difference_check(
      [&](const Tensor& v) {
        return kl_distill_loss(softmax_temperature(v, 3.0f), softmax_temperature(zt, 3.0f), 3.0f);
      },
      zs, kFdStep, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err;
  Tensor leaf = zt.clone();
  leaf.set_requires_grad(true);
  Tensor student = zs.clone();
  student.set_requires_grad(true);
  kl_distill_loss(softmax_temperature(student, 1.0f), softmax_temperature(leaf, 1.0f), 1.0f).backward();
  EXPECT_TRUE(student.has_grad());
  EXPECT_FALSE(leaf.has_grad());
}

TEST(L2Hint, ExamplesAndGradient) {
  Tensor a = randn({2, 5}, 41);
  EXPECT_EQ(l2_hint_loss(a, a).item(), 0.0f);
  EXPECT_EQ(l2_hint_loss(Tensor({1, 2}, {1, 2}), Tensor::zeros({1, 2})).item(), 5.0f);
  Tensor b = randn({2, 5}, 42);
  EXPECT_TRUE(
      finite_difference_check([&](const Tensor& v) { return l2_hint_loss(v, b); }, a, kFdStep, 1e-4).passed);
  EXPECT_THROW(l2_hint_loss(a, Tensor::zeros({2, 4})), DimensionError);
}

TEST(ClassWeights, Examples) {
  auto w = class_weights_inverse_freq(std::vector<std::size_t>{10, 10});
  EXPECT_FLOAT_EQ(w[0], 1.0f);
  EXPECT_FLOAT_EQ(w[1], 1.0f);
  w = class_weights_inverse_freq(std::vector<std::size_t>{10, 30});
  EXPECT_FLOAT_EQ(w[0], 1.5f);
  EXPECT_FLOAT_EQ(w[1], 0.5f);
  w = class_weights_inverse_freq(std::vector<std::size_t>{1, 1, 1});
  for (float v : w) EXPECT_FLOAT_EQ(v, 1.0f);
  EXPECT_THROW(class_weights_inverse_freq(std::vector<std::size_t>{3, 0}), ContractError);
}

ClassifierBundle leaf_bundle(std::size_t n, std::size_t k, std::size_t d, std::uint64_t seed, bool identical = false) {
  ClassifierBundle b;
  Tensor shared = randn({n, k}, seed, 1.0f, true);
  for (std::uint64_t i = 0; i < 3; ++i) {
    b.logits.push_back(identical ? shared : randn({n, k}, seed + 10 * i + 1, 1.0f, true));
    b.hints.push_back(randn({n, d}, seed + 10 * i + 2, 1.0f, true));
  }
  return b;
}

double focal_of(const Tensor& z, std::span<const int> y, const LossConfig& c) {
  return focal_loss(softmax_temperature(z, 1.0f), y, c).item();
}

TEST(TotalLoss, ZeroLambdasSumFocalTerms) {
  LossConfig cfg;
  cfg.lambda1 = 0.0f;
  cfg.lambda2 = 0.0f;
  ClassifierBundle b = leaf_bundle(4, 3, 6, 51);
  std::vector<int> y{0, 1, 2, 0};
  double expect = 0.0;
  for (const auto& z : b.logits) expect += focal_of(z, y, cfg);
  EXPECT_NEAR(total_loss(b, y, cfg).total.item(), expect, 1e-6);
}

TEST(TotalLoss, IdenticalLogitsHaveZeroKl) {
  LossConfig cfg;
  ClassifierBundle b = leaf_bundle(4, 3, 6, 52, true);
  std::vector<int> y{0, 1, 2, 0};
  LossTerms t = total_loss(b, y, cfg);
  EXPECT_EQ(t.kl, 0.0);
  double expect = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const bool deepest = i == 2;
    expect += (deepest ? 1.0 : 1.0 - cfg.lambda1) * focal_of(b.logits[i], y, cfg);
    if (!deepest) expect += cfg.lambda2 * l2_hint_loss(b.hints[i], b.hints[2]).item();
  }
  EXPECT_NEAR(t.total.item(), expect, 1e-6);
}

TEST(TotalLoss, SingleClassifierIsPureFocal) {
  LossConfig cfg;
  ClassifierBundle full = leaf_bundle(4, 3, 6, 53);
  ClassifierBundle b;
  b.logits.push_back(full.logits[0]);
  b.hints.push_back(full.hints[0]);
  std::vector<int> y{2, 1, 0, 0};
  LossTerms t = total_loss(b, y, cfg);
  EXPECT_NEAR(t.total.item(), focal_of(b.logits[0], y, cfg), 1e-6);
  EXPECT_EQ(t.kl, 0.0);
  EXPECT_EQ(t.l2, 0.0);
}

TEST(TotalLoss, TeacherReceivesOnlyItsFocalGradient) {
  LossConfig cfg;
  cfg.lambda2 = 0.3f;
  ClassifierBundle b = leaf_bundle(3, 4, 5, 54);
  std::vector<int> y{3, 0, 1};
  total_loss(b, y, cfg).total.backward();

  Tensor alone = b.logits[2].detach().clone();
  alone.set_requires_grad(true);
  focal_loss(softmax_temperature(alone, 1.0f), y, cfg).backward();
  for (std::size_t i = 0; i < alone.numel(); ++i) EXPECT_NEAR(b.logits[2].grad()[i], alone.grad()[i], 1e-7);
  EXPECT_FALSE(b.hints[2].has_grad() && std::any_of(b.hints[2].grad().begin(), b.hints[2].grad().end(),
                                                     [](float g) { return g != 0.0f; }));
}

TEST(TotalLoss, GradientThroughStudents) {
  LossConfig cfg;
  cfg.lambda2 = 0.2f;
  ClassifierBundle b = leaf_bundle(3, 3, 4, 55);
  std::vector<int> y{0, 1, 2};
  // Perturbing the deepest outputs also moves the detached targets, so only
  // the students are checked numerically here.
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor leaf = b.logits[i];
    auto rep = finite_difference_check_leaf([&] { return total_loss(b, y, cfg).total; }, leaf, kFdStep, 1e-4);
    EXPECT_TRUE(rep.passed) << i << " " << rep.max_rel_err;
    Tensor hint = b.hints[i];
    rep = finite_difference_check_leaf([&] { return total_loss(b, y, cfg).total; }, hint, kFdStep, 1e-4);
    EXPECT_TRUE(rep.passed) << i << " " << rep.max_rel_err;
  }
  cfg.lambda1 = 0.0f;
  cfg.lambda2 = 0.0f;
  Tensor deep = b.logits[2];
  auto rep = finite_difference_check_leaf([&] { return total_loss(b, y, cfg).total; }, deep, kFdStep, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err;
}

}  // namespace
}  // namespace mer
