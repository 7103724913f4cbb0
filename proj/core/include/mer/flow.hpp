#pragma once

#include "mer/tensor.hpp"

namespace mer {

/// Dense optical flow from frame_a to frame_b ([1,H,W] each) by the classical
/// Horn-Schunck scheme: central-difference spatial gradients of the mean
/// frame, temporal difference b - a, and Jacobi updates against the weighted
/// 8-neighbour average. Returns [2,H,W] as (u horizontal, v vertical) in
/// pixels.
Tensor horn_schunck_flow(const Tensor& frame_a, const Tensor& frame_b, float lambda_smooth, int iterations);

}  // namespace mer
