#include "mer/blocks.hpp"

#include <algorithm>
#include <cmath>

#include "mer/error.hpp"
#include "mer/ops.hpp"

namespace mer {

std::size_t eca_kernel_size(std::size_t channels) {
  if (channels < 2) throw ParameterError("eca_kernel_size: need at least 2 channels");
  const double t = std::log2(static_cast<double>(channels)) / 2.0 + 0.5;
  const auto f = static_cast<std::size_t>(std::floor(t));
  return f % 2 == 1 ? f : f + 1;
}

// ---------------------------------------------------------------------------
// ECA

EcaLayer::EcaLayer(std::size_t channels, ParamStore& params, const std::string& name, std::mt19937_64& rng)
    : channels_(channels) {
  const std::size_t k = eca_kernel_size(channels);
  kernel_ = params.add(name, {k}, Init::HeNormal, rng, k);
}

EcaLayer::EcaLayer(std::size_t channels, Tensor kernel) : channels_(channels), kernel_(std::move(kernel)) {
  if (kernel_.rank() != 1 || kernel_.numel() != eca_kernel_size(channels))
    throw ParameterError("EcaLayer: kernel must have " + std::to_string(eca_kernel_size(channels)) + " taps");
}

Tensor EcaLayer::attention(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != channels_)
    throw DimensionError("EcaLayer: expected [N," + std::to_string(channels_) + ",H,W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  Tensor avg = reshape(global_pool(x, PoolMode::Avg), {n, 1, channels_});
  Tensor mx = reshape(global_pool(x, PoolMode::Max), {n, 1, channels_});
  Tensor pre = add(conv1d(avg, kernel_), conv1d(mx, kernel_));
  return reshape(sigmoid(pre), {n, channels_, 1, 1});
}

Tensor EcaLayer::forward(const Tensor& x) const { return channel_scale(x, attention(x)); }

// ---------------------------------------------------------------------------
// Temporal shift

TsmSpec TsmSpec::for_channels(std::size_t channels, std::size_t num_frames, double shift_fraction) {
  if (shift_fraction < 0.0 || shift_fraction > 0.5) throw ParameterError("TSM shift fraction must lie in [0, 0.5]");
  TsmSpec spec;
  spec.num_frames = num_frames;
  spec.fold_forward = static_cast<std::size_t>(std::floor(static_cast<double>(channels) * shift_fraction));
  spec.fold_backward = spec.fold_forward;
  return spec;
}

namespace {

struct ShiftLayout {
  std::size_t n, t, c, plane;
};

ShiftLayout shift_layout(const TsmSpec& spec, const Tensor& x) {
  if (spec.num_frames < 2) throw ParameterError("TSM needs at least 2 frames");
  ShiftLayout l{};
  if (x.rank() == 5) {
    if (x.dim(1) != spec.num_frames)
      throw DimensionError("TSM: frame axis " + std::to_string(x.dim(1)) + " != " + std::to_string(spec.num_frames));
    l = {x.dim(0), x.dim(1), x.dim(2), x.dim(3) * x.dim(4)};
  } else if (x.rank() == 4) {
    if (x.dim(0) % spec.num_frames != 0)
      throw DimensionError("TSM: batch " + std::to_string(x.dim(0)) + " not divisible by frame count");
    l = {x.dim(0) / spec.num_frames, spec.num_frames, x.dim(1), x.dim(2) * x.dim(3)};
  } else {
    throw DimensionError("TSM: expected [N,T,C,H,W] or [N*T,C,H,W], got " + shape_str(x.shape()));
  }
  if (spec.fold_forward + spec.fold_backward > l.c)
    throw ParameterError("TSM: folds " + std::to_string(spec.fold_forward) + "+" + std::to_string(spec.fold_backward) +
                         " exceed " + std::to_string(l.c) + " channels");
  return l;
}

// Moves channel planes of `src` into `dst` (zero-filled). `forward` is the
// data direction; the adjoint uses the opposite direction.
void shift_planes(const float* src, float* dst, const ShiftLayout& l, std::size_t ff, std::size_t fb, bool adjoint) {
  const std::size_t frame = l.c * l.plane;
  for (std::size_t b = 0; b < l.n; ++b)
    for (std::size_t t = 0; t < l.t; ++t) {
      float* out = dst + (b * l.t + t) * frame;
      for (std::size_t ch = 0; ch < l.c; ++ch) {
        long from = static_cast<long>(t);
        if (ch < ff)
          from += adjoint ? 1 : -1;
        else if (ch < ff + fb)
          from += adjoint ? -1 : 1;
        if (from < 0 || from >= static_cast<long>(l.t)) continue;
        const float* in = src + (b * l.t + static_cast<std::size_t>(from)) * frame + ch * l.plane;
        std::copy(in, in + l.plane, out + ch * l.plane);
      }
    }
}

}  // namespace

Tensor tsm_shift(const TsmSpec& spec, const Tensor& x) {
  const ShiftLayout l = shift_layout(spec, x);
  std::vector<float> out(x.numel(), 0.0f);
  shift_planes(x.data().data(), out.data(), l, spec.fold_forward, spec.fold_backward, false);
  const std::size_t ff = spec.fold_forward, fb = spec.fold_backward;
  return make_result(x.shape(), std::move(out), {x},
                     [l, ff, fb](std::span<const float> gout, const GradSinks& sinks) {
                       auto gx = sinks.at(0);
                       std::vector<float> tmp(gx.size(), 0.0f);
                       shift_planes(gout.data(), tmp.data(), l, ff, fb, true);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
                     });
}

Tensor frame_mean(const Tensor& x, std::size_t frames) {
  if (frames == 0 || x.dim(0) % frames != 0)
    throw DimensionError("frame_mean: batch " + std::to_string(x.dim(0)) + " not divisible by " + std::to_string(frames));
  Shape shape = x.shape();
  shape[0] /= frames;
  const std::size_t n = shape[0];
  const std::size_t inner = x.numel() / x.dim(0);
  auto in = x.data();
  std::vector<float> out(n * inner);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < inner; ++i) {
      double s = 0.0;
      for (std::size_t t = 0; t < frames; ++t) s += in[(b * frames + t) * inner + i];
      out[b * inner + i] = static_cast<float>(s / static_cast<double>(frames));
    }
  return make_result(std::move(shape), std::move(out), {x},
                     [n, inner, frames](std::span<const float> gout, const GradSinks& sinks) {
                       auto gx = sinks.at(0);
                       const float w = 1.0f / static_cast<float>(frames);
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t t = 0; t < frames; ++t)
                           for (std::size_t i = 0; i < inner; ++i) gx[(b * frames + t) * inner + i] += gout[b * inner + i] * w;
                     });
}

// ---------------------------------------------------------------------------
// Magnification

ShapeEncoder::ShapeEncoder(std::size_t in_channels, std::size_t out_channels, ParamStore& params,
                           const std::string& name, std::mt19937_64& rng) {
  w1_ = params.add(name + ".conv1.weight", {out_channels, in_channels, 3, 3}, Init::HeNormal, rng);
  w2_ = params.add(name + ".conv2.weight", {out_channels, out_channels, 3, 3}, Init::HeNormal, rng);
}

Tensor ShapeEncoder::forward(const Tensor& x) const {
  return relu(conv2d(relu(conv2d(x, w1_, std::nullopt, 1, 1)), w2_, std::nullopt, 1, 1));
}

MagModule::MagModule(std::size_t in_channels, std::size_t channels, float alpha, ParamStore& params,
                     const std::string& name, std::mt19937_64& rng)
    : encoder_(in_channels, channels, params, name + ".encoder", rng), alpha_(alpha) {
  g_w_ = params.add(name + ".g.weight", {channels, channels, 3, 3}, Init::HeNormal, rng);
  h_w_ = params.add(name + ".h.weight", {channels, channels, 3, 3}, Init::HeNormal, rng);
  res_w1_ = params.add(name + ".h.res1.weight", {channels, channels, 3, 3}, Init::HeNormal, rng);
  res_w2_ = params.add(name + ".h.res2.weight", {channels, channels, 3, 3}, Init::HeNormal, rng);
}

Tensor MagModule::g(const Tensor& x) const { return relu(conv2d(x, g_w_, std::nullopt, 1, 1)); }

Tensor MagModule::h(const Tensor& x) const {
  Tensor y = conv2d(x, h_w_, std::nullopt, 1, 1);
  Tensor r = conv2d(relu(conv2d(y, res_w1_, std::nullopt, 1, 1)), res_w2_, std::nullopt, 1, 1);
  return add(y, r);
}

Tensor MagModule::manipulate(const Tensor& shape_a, const Tensor& shape_b) const {
  if (shape_a.shape() != shape_b.shape())
    throw DimensionError("MagModule: representations differ " + shape_str(shape_a.shape()) + " vs " +
                         shape_str(shape_b.shape()));
  return add(shape_a, h(scale(g(sub(shape_b, shape_a)), alpha_)));
}

Tensor MagModule::forward(const Tensor& frame_a, const Tensor& frame_b) const {
  if (frame_a.shape() != frame_b.shape())
    throw DimensionError("MagModule: frames differ " + shape_str(frame_a.shape()) + " vs " +
                         shape_str(frame_b.shape()));
  const Tensor mb = encoder_.forward(frame_b);
  // A bias-free conv/relu stack maps an all-zero constant frame to zeros.
  const auto fa = frame_a.data();
  const bool zero_a = !frame_a.requires_grad() && std::all_of(fa.begin(), fa.end(), [](float v) { return v == 0.0f; });
  const Tensor ma = zero_a ? Tensor::zeros(mb.shape()) : encoder_.forward(frame_a);
  return manipulate(ma, mb);
}

}  // namespace mer
