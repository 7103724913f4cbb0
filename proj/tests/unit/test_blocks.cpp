#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>

#include "mer/blocks.hpp"
#include "mer/error.hpp"
#include "mer/gradcheck.hpp"
#include "mer/ops.hpp"
#include "support.hpp"

namespace mer {
namespace {

using testing::kDeepFdStep;
using testing::kFdStep;
using testing::randn;
using testing::weighted_sum;

// floor(log2(C)/2 + 1/2) == floor((floor(log2 C) + 1) / 2), computed on integers.
std::size_t eca_oracle(std::size_t c) {
  const std::size_t m = static_cast<std::size_t>(std::bit_width(c)) - 1;
  const std::size_t t = (m + 1) / 2;
  return t % 2 == 1 ? t : t + 1;
}

TEST(EcaKernel, WorkedValues) {
  EXPECT_EQ(eca_kernel_size(16), 3u);
  EXPECT_EQ(eca_kernel_size(64), 3u);
  EXPECT_EQ(eca_kernel_size(256), 5u);
  EXPECT_THROW(eca_kernel_size(1), ParameterError);
  EXPECT_THROW(eca_kernel_size(0), ParameterError);
}

TEST(EcaKernel, OracleOddMonotoneOverRange) {
  std::size_t prev = 0;
  for (std::size_t c = 2; c <= 4096; ++c) {
    const std::size_t k = eca_kernel_size(c);
    ASSERT_EQ(k, eca_oracle(c)) << c;
    ASSERT_EQ(k % 2, 1u) << c;
    ASSERT_GE(k, prev) << c;
    prev = k;
  }
}

TEST(Eca, ZeroKernelHalvesInput) {
  EcaLayer eca(16, Tensor::zeros({3}));
  Tensor x = randn({2, 16, 4, 4}, 1);
  Tensor y = eca.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], 0.5f * x[i]);
}

TEST(Eca, ConstantChannelPreActivation) {
  // Only channel 5 carries the constant c, so channels 4..6 see 2*c*(tap reaching them).
  const float c = 0.7f;
  Tensor k({3}, {0.3f, -0.4f, 0.9f});
  std::vector<float> xv(16 * 9, 0.0f);
  for (std::size_t i = 0; i < 9; ++i) xv[5 * 9 + i] = c;
  EcaLayer eca(16, k);
  Tensor m = eca.attention(Tensor({1, 16, 3, 3}, xv));
  auto logit = [&](std::size_t ch) { return std::log(m[ch] / (1.0 - m[ch])); };
  EXPECT_NEAR(logit(4), 2 * c * k[2], 1e-5);
  EXPECT_NEAR(logit(5), 2 * c * k[1], 1e-5);
  EXPECT_NEAR(logit(6), 2 * c * k[0], 1e-5);
  EXPECT_NEAR(logit(0), 0.0, 1e-6);
}

TEST(Eca, MagnitudeNeverGrows) {
  std::mt19937_64 rng(2);
  for (std::uint64_t s = 0; s < 20; ++s) {
    ParamStore ps;
    const std::size_t ch = 4 + 12 * (s % 3);
    EcaLayer eca(ch, ps, "eca", rng);
    Tensor x = randn({2, ch, 5, 5}, 100 + s, 2.0f);
    Tensor y = eca.forward(x);
    for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_LE(std::abs(y[i]), std::abs(x[i]));
  }
}

TEST(Eca, Errors) {
  EXPECT_THROW(EcaLayer(16, Tensor::zeros({5})), ParameterError);
  EcaLayer eca(16, Tensor::zeros({3}));
  EXPECT_THROW(eca.forward(Tensor::zeros({1, 8, 2, 2})), DimensionError);
}

TEST(Eca, Gradient) {
  std::mt19937_64 rng(3);
  ParamStore ps;
  EcaLayer eca(16, ps, "eca", rng);
  Tensor x = randn({2, 16, 4, 4}, 4);
  auto fx = [&](const Tensor& v) { return weighted_sum(eca.forward(v), 5); };
  EXPECT_TRUE(finite_difference_check(fx, x, kFdStep, 1e-4).passed);
  Tensor kernel = eca.kernel();
  auto fk = [&] { return weighted_sum(eca.forward(x), 5); };
  auto rep = finite_difference_check_leaf(fk, kernel, kFdStep, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err;
}

TEST(Tsm, WorkedExample) {
  // T=2, C=8, one channel each way.
  const float A = 1.25f, B = -3.0f, P = 7.5f, Q = 0.5f;
  std::vector<float> xv(2 * 8, 0.0f);
  xv[0 * 8 + 0] = A;
  xv[1 * 8 + 0] = B;
  xv[0 * 8 + 1] = P;
  xv[1 * 8 + 1] = Q;
  for (std::size_t ch = 2; ch < 8; ++ch) {
    xv[ch] = static_cast<float>(ch);
    xv[8 + ch] = -static_cast<float>(ch);
  }
  TsmSpec spec{2, 1, 1};
  Tensor y = tsm_shift(spec, Tensor({1, 2, 8, 1, 1}, xv));
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_EQ(y[8], A);
  EXPECT_EQ(y[1], Q);
  EXPECT_EQ(y[9], 0.0f);
  for (std::size_t ch = 2; ch < 8; ++ch) {
    EXPECT_EQ(y[ch], xv[ch]);
    EXPECT_EQ(y[8 + ch], xv[8 + ch]);
  }
}

TEST(Tsm, ZeroFoldsIsIdentity) {
  Tensor x = randn({4, 6, 3, 3}, 6);
  EXPECT_TRUE(bit_equal(tsm_shift(TsmSpec{2, 0, 0}, x), x));
}

TEST(Tsm, MatchesNaiveReferenceOnRandomShapes) {
  std::mt19937_64 rng(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = pick(1, 3), t = pick(2, 5), c = pick(1, 24), h = pick(1, 6), w = pick(1, 6);
    const std::size_t ff = pick(0, c), fb = pick(0, c - ff);
    Tensor x = randn({n, t, c, h, w}, 7000 + trial);
    Tensor y = tsm_shift(TsmSpec{t, ff, fb}, x);
    auto ref = testing::naive_tsm(std::vector<float>(x.data().begin(), x.data().end()), n, t, c, h * w, ff, fb);
    ASSERT_EQ(y.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
      ASSERT_EQ(std::bit_cast<std::uint32_t>(y[i]), std::bit_cast<std::uint32_t>(ref[i])) << "trial " << trial;

    // Folded batch layout must agree with the explicit frame axis.
    Tensor folded = tsm_shift(TsmSpec{t, ff, fb}, reshape(x, {n * t, c, h, w}));
    ASSERT_TRUE(std::equal(folded.data().begin(), folded.data().end(), y.data().begin()));

    // Multiset conservation: output plus truncated values equals input plus zero fill.
    std::vector<float> lhs(y.data().begin(), y.data().end()), rhs(x.data().begin(), x.data().end());
    const std::size_t hw = h * w;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < ff + fb; ++ch) {
        const std::size_t f = ch < ff ? t - 1 : 0;
        const std::size_t base = ((b * t + f) * c + ch) * hw;
        lhs.insert(lhs.end(), x.data().begin() + base, x.data().begin() + base + hw);
        rhs.insert(rhs.end(), hw, 0.0f);
      }
    std::sort(lhs.begin(), lhs.end());
    std::sort(rhs.begin(), rhs.end());
    ASSERT_EQ(lhs, rhs);
  }
}

TEST(Tsm, AdjointReproducesOccupancy) {
  const std::size_t n = 2, t = 3, c = 8, hw = 4;
  TsmSpec spec{t, 2, 1};
  Tensor x = randn({n, t, c, 2, 2}, 8, 1.0f, true);
  sum(tsm_shift(spec, x)).backward();
  auto occ = testing::naive_tsm(std::vector<float>(x.numel(), 1.0f), n, t, c, hw, 0, 0);
  // A value survives unless it sits in the last frame of a forward channel or the first frame of a backward one.
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t f = 0; f < t; ++f)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t i = ((b * t + f) * c + ch) * hw + p;
          const bool lost = (ch < 2 && f + 1 == t) || (ch >= 2 && ch < 3 && f == 0);
          EXPECT_EQ(x.grad()[i], lost ? 0.0f : occ[i]);
        }
}

TEST(Tsm, GradientAndErrors) {
  Tensor x = randn({2, 2, 8, 3, 3}, 9);
  TsmSpec spec{2, 1, 1};
  EXPECT_TRUE(
      finite_difference_check([&](const Tensor& v) { return weighted_sum(tsm_shift(spec, v), 10); }, x, kFdStep, 1e-4)
          .passed);
  EXPECT_THROW(tsm_shift(TsmSpec{2, 5, 4}, x), ParameterError);
  EXPECT_THROW(tsm_shift(TsmSpec{3, 1, 1}, x), DimensionError);
  EXPECT_THROW(tsm_shift(TsmSpec{2, 1, 1}, Tensor::zeros({3, 8, 2, 2})), DimensionError);
  const TsmSpec s = TsmSpec::for_channels(64, 2, 0.125);
  EXPECT_EQ(s.fold_forward, 8u);
  EXPECT_EQ(s.fold_backward, 8u);
}

MagModule make_mag(std::size_t in, std::uint64_t seed, ParamStore& ps, float alpha = 2.0f) {
  std::mt19937_64 rng(seed);
  return MagModule(in, 16, alpha, ps, "mag", rng);
}

TEST(Mag, IdentityWhenFramesEqual) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    ParamStore ps;
    const std::size_t in = s % 2 == 0 ? 1 : 2;
    MagModule mag = make_mag(in, 300 + s, ps);
    Tensor x = randn({2, in, 12, 12}, 400 + s);
    Tensor y = mag.forward(x, x);
    Tensor e = mag.encoder().forward(x);
    ASSERT_TRUE(bit_equal(y, e)) << s;
  }
}

TEST(Mag, ZeroAlphaReturnsOnsetShape) {
  ParamStore ps;
  MagModule mag = make_mag(1, 11, ps, 0.0f);
  Tensor a = randn({2, 1, 10, 10}, 12), b = randn({2, 1, 10, 10}, 13);
  EXPECT_TRUE(bit_equal(mag.forward(a, b), mag.encoder().forward(a)));
}

TEST(Mag, ZeroOnsetMatchesExplicitComputation) {
  ParamStore ps;
  MagModule mag = make_mag(2, 14, ps);
  Tensor zero = Tensor::zeros({2, 2, 8, 8});
  Tensor b = randn({2, 2, 8, 8}, 15);
  Tensor ma = mag.encoder().forward(zero);
  for (float v : ma.data()) EXPECT_EQ(v, 0.0f);
  Tensor expect = mag.manipulate(ma, mag.encoder().forward(b));
  EXPECT_TRUE(bit_equal(mag.forward(zero, b), expect));
}

TEST(Mag, AlphaScalesDifference) {
  ParamStore ps;
  MagModule mag = make_mag(1, 16, ps);
  Tensor a = randn({1, 1, 8, 8}, 17), b = randn({1, 1, 8, 8}, 18);
  Tensor y2 = mag.forward(a, b);
  mag.set_alpha(0.5f);
  Tensor y05 = mag.forward(a, b);
  EXPECT_FALSE(bit_equal(y2, y05));
  EXPECT_THROW(mag.forward(a, Tensor::zeros({1, 1, 4, 4})), DimensionError);
}

TEST(Mag, Gradient) {
  ParamStore ps;
  MagModule mag = make_mag(1, 19, ps);
  Tensor a = randn({1, 1, 6, 6}, 20, 1.0f, true), b = randn({1, 1, 6, 6}, 21, 1.0f, true);
  auto f = [&] { return weighted_sum(mag.forward(a, b), 22); };
  std::vector<Tensor> leaves{a, b};
  for (const auto& [name, p] : ps.entries()) leaves.push_back(p);
  auto rep = finite_difference_check_smooth(f, leaves, 40, 23, 4e-2f, 1e-4);
  EXPECT_TRUE(rep.passed) << rep.max_rel_err << " at " << rep.worst_index;
  EXPECT_EQ(rep.checked, 40u);
}

TEST(FrameMean, AveragesPairsAndGradient) {
  Tensor x({4, 1}, {1, 3, 5, 9});
  Tensor y = frame_mean(x, 2);
  EXPECT_EQ(y[0], 2.0f);
  EXPECT_EQ(y[1], 7.0f);
  EXPECT_THROW(frame_mean(Tensor::zeros({3, 1}), 2), DimensionError);
  Tensor r = randn({4, 3, 2, 2}, 23);
  EXPECT_TRUE(
      finite_difference_check([](const Tensor& v) { return weighted_sum(frame_mean(v, 2), 24); }, r, kFdStep, 1e-4)
          .passed);
}

}  // namespace
}  // namespace mer
