#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "mer/params.hpp"
#include "mer/tensor.hpp"

namespace mer {

/// Adaptive ECA kernel width: t = log2(C)/2 + 1/2, then floor(t) if odd,
/// otherwise floor(t) + 1.
std::size_t eca_kernel_size(std::size_t channels);

/// Channel attention with dual (average + max) pooling sharing one 1D kernel.
class EcaLayer {
 public:
  EcaLayer() = default;
  EcaLayer(std::size_t channels, ParamStore& params, const std::string& name, std::mt19937_64& rng);
  /// Wraps an existing kernel tensor [k]; k must equal eca_kernel_size(channels).
  EcaLayer(std::size_t channels, Tensor kernel);

  /// sigmoid(conv1d(GAP(x)) + conv1d(GMP(x))) as [N,C,1,1].
  Tensor attention(const Tensor& x) const;
  /// attention(x) broadcast-multiplied over every channel plane of x.
  Tensor forward(const Tensor& x) const;

  std::size_t channels() const { return channels_; }
  std::size_t kernel_size() const { return kernel_.numel(); }
  const Tensor& kernel() const { return kernel_; }

 private:
  std::size_t channels_ = 0;
  Tensor kernel_;
};

/// Bi-directional temporal shift: channels [0, fold_forward) move one frame
/// later, the next fold_backward channels move one frame earlier, the rest
/// stay. Vacated slots are zero, displaced values are dropped.
struct TsmSpec {
  std::size_t num_frames = 2;
  std::size_t fold_forward = 0;
  std::size_t fold_backward = 0;

  /// floor(C * shift_fraction) channels per direction.
  static TsmSpec for_channels(std::size_t channels, std::size_t num_frames, double shift_fraction);
};

/// x is [N, T, C, H, W] (or the same memory viewed as [N*T, C, H, W]).
Tensor tsm_shift(const TsmSpec& spec, const Tensor& x);

/// Averages consecutive groups of `frames` along the batch axis:
/// [N*T, ...] -> [N, ...].
Tensor frame_mean(const Tensor& x, std::size_t frames);

/// Bias-free conv3x3 -> relu -> conv3x3 -> relu, shape-preserving.
class ShapeEncoder {
 public:
  ShapeEncoder() = default;
  ShapeEncoder(std::size_t in_channels, std::size_t out_channels, ParamStore& params, const std::string& name,
               std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  std::size_t out_channels() const { return w2_.dim(0); }

 private:
  Tensor w1_, w2_;
};

/// Decoder-free magnification: a shared shape encoder and the manipulator
/// G(Ma, Mb) = Ma + h(alpha * g(Mb - Ma)). g is conv3x3 + relu, h is conv3x3
/// followed by a residual block y + conv(relu(conv(y))). All convolutions are
/// bias-free, so G(M, M) == M exactly.
class MagModule {
 public:
  MagModule() = default;
  MagModule(std::size_t in_channels, std::size_t channels, float alpha, ParamStore& params, const std::string& name,
            std::mt19937_64& rng);

  Tensor forward(const Tensor& frame_a, const Tensor& frame_b) const;
  Tensor manipulate(const Tensor& shape_a, const Tensor& shape_b) const;
  Tensor g(const Tensor& x) const;
  Tensor h(const Tensor& x) const;

  const ShapeEncoder& encoder() const { return encoder_; }
  float alpha() const { return alpha_; }
  void set_alpha(float alpha) { alpha_ = alpha; }

 private:
  ShapeEncoder encoder_;
  Tensor g_w_, h_w_, res_w1_, res_w2_;
  float alpha_ = 2.0f;
};

}  // namespace mer
