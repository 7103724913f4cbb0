#pragma once

#include <optional>
#include <vector>

#include "mer/tensor.hpp"

namespace mer {

enum class PoolMode { Avg, Max };

/// 2D cross-correlation. input [N,Cin,H,W], weight [Cout,Cin,kH,kW] with odd
/// kernel sides, optional bias [Cout]. The output side
/// (H + 2*padding - kH) / stride + 1 must be integral.
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, int stride, int padding);

/// Length-preserving 1D convolution along the last axis of [N,1,C] with a
/// shared odd-length kernel [k], zero padding (k-1)/2, no bias.
Tensor conv1d(const Tensor& input, const Tensor& kernel);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Natural log; inputs must be positive.
Tensor log(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);

/// Scales every [H,W] plane of x [N,C,H,W] by the matching entry of m [N,C,1,1].
Tensor channel_scale(const Tensor& x, const Tensor& m);

/// Concatenates along axis 1. All other extents must agree.
Tensor concat(const std::vector<Tensor>& parts);

Tensor reshape(const Tensor& x, Shape shape);
/// [N, ...] -> [N, prod(...)]
Tensor flatten(const Tensor& x);

/// x [N,D] times weight [K,D] transposed, plus bias [K].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// 2x2 window, stride 2. Ties route the gradient to the first maximum in
/// row-major order.
Tensor max_pool2d(const Tensor& x);

/// [N,C,H,W] -> [N,C,1,1]. Max routes the gradient to the first maximum.
Tensor global_pool(const Tensor& x, PoolMode mode);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Row-wise softmax of z [N,K] / T.
Tensor softmax_temperature(const Tensor& z, float temperature);

}  // namespace mer
