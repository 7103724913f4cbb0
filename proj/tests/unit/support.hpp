#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <cstddef>
#include <random>
#include <vector>

#include "mer/dataset.hpp"
#include "mer/gradcheck.hpp"
#include "mer/ops.hpp"
#include "mer/tensor.hpp"

namespace mer::testing {

inline Tensor randn(Shape shape, std::uint64_t seed, float stddev = 1.0f, bool rg = false) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(std::move(shape), rng, stddev, rg);
}

inline Tensor uniform(Shape shape, std::uint64_t seed, float lo, float hi, bool rg = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v), rg);
}

/// Moves values lying within `margin` of zero out to +-margin so relu/max
/// kinks stay out of the difference stencil.
inline Tensor away_from_zero(Tensor t, float margin = 0.02f) {
  for (auto& v : t.mutable_data())
    if (std::abs(v) < margin) v = v < 0 ? -margin - std::abs(v) : margin + std::abs(v);
  return t;
}

/// Scalar objective sum(y * r) with fixed random weights r, so every output
/// element contributes a distinct gradient.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  const Tensor r = randn(y.shape(), seed, 1.0f / std::sqrt(static_cast<float>(y.numel())));
  return sum(mul(y, r));
}

/// Literal nested-loop cross-correlation.
inline std::vector<double> naive_conv2d(const Tensor& x, const Tensor& w, const std::vector<float>& bias, int stride,
                                        int pad, std::size_t& ho, std::size_t& wo) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  ho = (h + 2 * pad - kh) / stride + 1;
  wo = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * co * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) - pad;
                const long ix = static_cast<long>(xx * stride + kx) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(x[((b * ci + c) * h + iy) * wd + ix]) * w[((o * ci + c) * kh + ky) * kw + kx];
              }
          out[((b * co + o) * ho + y) * wo + xx] = acc;
        }
  return out;
}

/// Straightforward bi-directional temporal shift over [N,T,C,H,W].
inline std::vector<float> naive_tsm(const std::vector<float>& x, std::size_t n, std::size_t t, std::size_t c,
                                    std::size_t hw, std::size_t fold_fwd, std::size_t fold_bwd) {
  std::vector<float> out(x.size(), 0.0f);
  auto at = [&](std::size_t b, std::size_t f, std::size_t ch, std::size_t p) { return ((b * t + f) * c + ch) * hw + p; };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t f = 0; f < t; ++f)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) {
          float v;
          if (ch < fold_fwd) v = f == 0 ? 0.0f : x[at(b, f - 1, ch, p)];
          else if (ch < fold_fwd + fold_bwd) v = f + 1 == t ? 0.0f : x[at(b, f + 1, ch, p)];
          else v = x[at(b, f, ch, p)];
          out[at(b, f, ch, p)] = v;
        }
  return out;
}

/// Step used by the gradient suite; large enough that f32 rounding of the
/// objective stays well below the tolerances.
inline constexpr float kFdStep = 1e-2f;

/// Step for whole-model checks; kink crossings are rejected separately.
inline constexpr float kDeepFdStep = 8e-3f;

/// In-memory dataset whose class is carried by the direction of a uniform
/// flow field; subjects differ only by frame texture.
inline Dataset toy_dataset(std::size_t subjects, std::size_t classes, std::size_t per, std::uint64_t seed,
                           std::size_t size = 16, float noise = 0.1f) {
  Dataset ds;
  ds.num_classes = classes;
  ds.prep.grid = 4;
  ds.prep.input_size = size;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n01(0.0f, 1.0f);
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  const std::size_t plane = size * size;
  for (std::size_t s = 0; s < subjects; ++s) {
    std::vector<float> tex(plane);
    for (auto& v : tex) v = u01(rng);
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t r = 0; r < per; ++r) {
        PreparedSample p;
        p.subject = "s" + std::to_string(s);
        p.label = static_cast<int>(c);
        p.s_onset = tex;
        p.s_apex = tex;
        for (std::size_t g = 0; g < 16; ++g) {
          p.l_onset.insert(p.l_onset.end(), tex.begin(), tex.end());
          p.l_apex.insert(p.l_apex.end(), tex.begin(), tex.end());
        }
        const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
        p.t_flow.resize(4 * plane);
        for (std::size_t i = 0; i < plane; ++i) {
          p.t_flow[i] = static_cast<float>(std::cos(a)) + noise * n01(rng);
          p.t_flow[plane + i] = static_cast<float>(std::sin(a)) + noise * n01(rng);
          p.t_flow[2 * plane + i] = -p.t_flow[i];
          p.t_flow[3 * plane + i] = -p.t_flow[plane + i];
        }
        ds.samples.push_back(std::move(p));
      }
  }
  return ds;
}

inline ModelConfig toy_model(std::size_t classes, bool mag = false) {
  ModelConfig c;
  c.num_classes = classes;
  c.base_channels = {8, 8, 8, 8};
  c.input_size = 16;
  c.mag_channels = 4;
  c.use_mag = mag;
  return c;
}

}  // namespace mer::testing
