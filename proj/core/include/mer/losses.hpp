#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mer/model.hpp"
#include "mer/tensor.hpp"

namespace mer {

struct LossConfig {
  float gamma_focal = 2.0f;
  std::vector<float> class_weights;  // alpha_k, mean 1
  float temperature = 3.0f;
  float lambda1 = 0.1f;
  float lambda2 = 1e-6f;
};

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr float kProbClamp = 1e-7f;

/// alpha_k proportional to 1/count_k, rescaled so the mean weight is 1.
std::vector<float> class_weights_inverse_freq(std::span<const std::size_t> counts);

/// Batch mean of -alpha_y (1 - q_y)^gamma log q_y for probabilities q [N,K].
Tensor focal_loss(const Tensor& q, std::span<const int> labels, const LossConfig& cfg);

/// Batch mean of T^2 * sum_k p_k log(p_k / q_k), p = teacher. The teacher is
/// read as a constant; no gradient reaches it.
Tensor kl_distill_loss(const Tensor& q_student, const Tensor& q_teacher, float temperature);

/// Batch mean of ||f_i - f_c||^2 with f_c held constant.
Tensor l2_hint_loss(const Tensor& f_i, const Tensor& f_c);

struct LossTerms {
  Tensor total;
  double focal = 0.0;  // unweighted sum over classifiers
  double kl = 0.0;
  double l2 = 0.0;
};

/// Sum over classifiers of (1 - l1) FL(q(1), y) + l1 KL(q(T), qC(T)) + l2 L2,
/// with l1 = l2 = 0 for the deepest classifier.
LossTerms total_loss(const ClassifierBundle& bundle, std::span<const int> labels, const LossConfig& cfg);

}  // namespace mer
