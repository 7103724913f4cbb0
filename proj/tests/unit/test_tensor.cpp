#include <gtest/gtest.h>

#include <limits>

#include "mer/error.hpp"
#include "mer/gradcheck.hpp"
#include "mer/ops.hpp"
#include "support.hpp"

namespace mer {
namespace {

TEST(Tensor, ConstructionChecksValueCount) {
  EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f}), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_FLOAT_EQ(t[4], 5.0f);
}

TEST(Tensor, BackwardRequiresScalar) {
  Tensor x({2}, {1, 2}, true);
  Tensor y = scale(x, 2.0f);
  EXPECT_THROW(y.backward(), ContractError);
}

TEST(Tensor, ReluSumGradientUsesZeroSubgradient) {
  Tensor x({3}, {-1.0f, 2.0f, 0.0f}, true);
  sum(relu(x)).backward();
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad()[0], 0.0f);
  EXPECT_EQ(x.grad()[1], 1.0f);
  EXPECT_EQ(x.grad()[2], 0.0f);
}

TEST(Tensor, ProductRule) {
  Tensor a = testing::randn({5}, 1, 1.0f, true);
  Tensor b = testing::randn({5}, 2, 1.0f, true);
  sum(mul(a, b)).backward();
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a.grad()[i], b[i]);
    EXPECT_EQ(b.grad()[i], a[i]);
  }
}

TEST(Tensor, ReuseAccumulates) {
  Tensor x({3}, {1, -2, 3}, true);
  sum(add(x, x)).backward();
  for (float g : x.grad()) EXPECT_EQ(g, 2.0f);
}

TEST(Tensor, ReuseEqualsSumOfSinglePathGradients) {
  Tensor x0 = testing::randn({2, 3, 5, 5}, 3);
  Tensor w = testing::randn({3, 3, 3, 3}, 4, 0.3f);
  auto path_a = [&](const Tensor& x) { return sum(mul(relu(conv2d(x, w, std::nullopt, 1, 1)), x)); };
  auto path_b = [&](const Tensor& x) { return mean(sigmoid(x)); };

  Tensor both = x0.clone();
  both.set_requires_grad(true);
  add(path_a(both), path_b(both)).backward();

  Tensor xa = x0.clone(), xb = x0.clone();
  xa.set_requires_grad(true);
  xb.set_requires_grad(true);
  path_a(xa).backward();
  path_b(xb).backward();
  for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_EQ(both.grad()[i], xa.grad()[i] + xb.grad()[i]);
}

TEST(Tensor, GradientsAccumulateAcrossBackwardCalls) {
  Tensor x({2}, {1, 2}, true);
  sum(x).backward();
  sum(x).backward();
  EXPECT_EQ(x.grad()[0], 2.0f);
  x.zero_grad();
  EXPECT_TRUE(!x.has_grad() || x.grad()[0] == 0.0f);
}

TEST(Tensor, DetachBlocksGradient) {
  Tensor x({2}, {1, 2}, true);
  Tensor y = mul(x, x.detach());
  sum(y).backward();
  EXPECT_EQ(x.grad()[0], 1.0f);
  EXPECT_EQ(x.grad()[1], 2.0f);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  Tensor x({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    Tensor y = scale(x, 3.0f);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(scale(x, 3.0f).requires_grad());
}

TEST(Tensor, CloneIsDeep) {
  Tensor x({2}, {1, 2});
  Tensor c = x.clone();
  c.mutable_data()[0] = 9.0f;
  EXPECT_EQ(x[0], 1.0f);
  EXPECT_TRUE(bit_equal(x, Tensor({2}, {1, 2})));
}

TEST(Tensor, CheckFiniteThrowsNumericalError) {
  Tensor x({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  EXPECT_THROW(check_finite(x, "x"), NumericalError);
}

TEST(GradCheck, QuadraticClosedForm) {
  Tensor x({3}, {1, 2, 3});
  // Central differences are exact for a quadratic; a dyadic step keeps every
  // perturbed value exactly representable.
  auto rep = finite_difference_check([](const Tensor& v) { return sum(mul(v, v)); }, x, 0.25f, 1e-6);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err;
  Tensor leaf({3}, {1, 2, 3}, true);
  sum(mul(leaf, leaf)).backward();
  EXPECT_EQ(leaf.grad()[0], 2.0f);
  EXPECT_EQ(leaf.grad()[1], 4.0f);
  EXPECT_EQ(leaf.grad()[2], 6.0f);
}

TEST(GradCheck, ReluAwayFromKink) {
  Tensor x({4}, {-1.5f, -0.5f, 0.5f, 1.5f});
  auto rep = finite_difference_check([](const Tensor& v) { return sum(relu(v)); }, x, 1.0f / 64, 1e-6);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err;
}

TEST(GradCheck, LinearIsExact) {
  Tensor x({4}, {0.25f, -0.5f, 1.0f, 2.0f});
  auto rep = finite_difference_check([](const Tensor& v) { return sum(scale(v, 3.0f)); }, x, 1.0f / 64, 1e-8);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err;
}

TEST(GradCheck, DetectsWrongGradient) {
  auto wrong = [](const Tensor& v) {
    return make_result({1}, {static_cast<float>(v[0] * v[0])}, {v},
                       [](std::span<const float> g, const GradSinks& s) { s.at(0)[0] += g[0]; });
  };
  Tensor x({1}, {3.0f});
  EXPECT_FALSE(finite_difference_check(wrong, x).passed);
}

TEST(ActivationPattern, TracksReluSigns) {
  Tensor x({3}, {-1.0f, 0.5f, 2.0f});
  auto pattern = [](const Tensor& v) {
    ActivationPattern probe;
    (void)relu(v);
    return probe.hash();
  };
  const auto base = pattern(x);
  EXPECT_EQ(pattern(x), base);
  EXPECT_EQ(pattern(Tensor({3}, {-3.0f, 0.1f, 9.0f})), base);
  EXPECT_NE(pattern(Tensor({3}, {1.0f, 0.5f, 2.0f})), base);
  EXPECT_EQ(detail::activation_pattern_sink(), nullptr);
}

TEST(ActivationPattern, Nests) {
  ActivationPattern outer;
  const auto before = outer.hash();
  {
    ActivationPattern inner;
    (void)relu(Tensor({2}, {1.0f, -1.0f}));
    EXPECT_NE(inner.hash(), before);
  }
  EXPECT_EQ(outer.hash(), before);
  (void)max_pool2d(Tensor({1, 1, 2, 2}, {1, 4, 2, 3}));
  EXPECT_NE(outer.hash(), before);
  outer.reset();
  EXPECT_EQ(outer.hash(), before);
}

TEST(GradCheck, SmoothCheckSkipsKinks) {
  Tensor x({4}, {-0.001f, 0.5f, 1.0f, -2.0f});
  auto f = [&] { return sum(mul(relu(x), relu(x))); };
  std::size_t skipped = 0;
  auto rep = finite_difference_check_smooth(f, {x}, 3, 1, 0.01f, 1e-4, &skipped);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err;
  EXPECT_EQ(rep.checked, 3u);
  EXPECT_GT(skipped, 0u);
  // Only three elements are smooth at this step.
  rep = finite_difference_check_smooth(f, {x}, 4, 1, 0.01f, 1e-4);
  EXPECT_FALSE(rep.passed);
  EXPECT_EQ(rep.checked, 0u);
  EXPECT_EQ(rep.max_rel_err, 1.0);
}

}  // namespace
}  // namespace mer
