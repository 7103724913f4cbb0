#include "mer/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mer/error.hpp"
#include "mer/ops.hpp"

namespace mer {

namespace {

void check_distribution(const Tensor& q, const char* what) {
  if (q.rank() != 2) throw DimensionError(std::string(what) + ": expected [N,K], got " + shape_str(q.shape()));
  const std::size_t n = q.dim(0), k = q.dim(1);
  auto d = q.data();
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += d[r * k + j];
    if (std::abs(s - 1.0) > 1e-5)
      throw ContractError(std::string(what) + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
  }
}

// Clamp and report whether the value was inside the open range (derivative
// passes through) or pinned (derivative is zero).
struct Clamped {
  double value;
  bool live;
};

Clamped clamp_prob(float p) {
  constexpr double lo = kProbClamp, hi = 1.0 - static_cast<double>(kProbClamp);
  if (p < lo) return {lo, false};
  if (p > hi) return {hi, false};
  return {static_cast<double>(p), true};
}

}  // namespace

std::vector<float> class_weights_inverse_freq(std::span<const std::size_t> counts) {
  if (counts.empty()) throw ContractError("class_weights_inverse_freq: no classes");
  std::vector<double> inv;
  double total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) throw ContractError("class " + std::to_string(i) + " has no samples");
    inv.push_back(1.0 / static_cast<double>(counts[i]));
    total += inv.back();
  }
  const double mean = total / static_cast<double>(counts.size());
  std::vector<float> out;
  for (double v : inv) out.push_back(static_cast<float>(v / mean));
  return out;
}

Tensor focal_loss(const Tensor& q, std::span<const int> labels, const LossConfig& cfg) {
  check_distribution(q, "focal_loss");
  const std::size_t n = q.dim(0), k = q.dim(1);
  if (labels.size() != n) throw DimensionError("focal_loss: label count does not match batch");
  std::vector<float> alpha = cfg.class_weights.empty() ? std::vector<float>(k, 1.0f) : cfg.class_weights;
  if (alpha.size() != k) throw DimensionError("focal_loss: class weight count does not match K");
  for (float a : alpha)
    if (!(a > 0.0f)) throw ContractError("focal_loss: class weights must be positive");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw ContractError("focal_loss: label " + std::to_string(y) + " out of range");

  const double gamma = cfg.gamma_focal;
  auto d = q.data();
  double total = 0.0;
  std::vector<double> dq(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto y = static_cast<std::size_t>(labels[r]);
    const auto [p, live] = clamp_prob(d[r * k + y]);
    const double a = alpha[y];
    const double lp = std::log(p);
    total += -a * std::pow(1.0 - p, gamma) * lp;
    if (live) {
      double g = -a * std::pow(1.0 - p, gamma) / p;
      if (gamma != 0.0) g += a * gamma * std::pow(1.0 - p, gamma - 1.0) * lp;
      dq[r] = g / static_cast<double>(n);
    }
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result({1}, {static_cast<float>(total / static_cast<double>(n))}, {q},
                     [dq = std::move(dq), ys = std::move(ys), k](std::span<const float> gout, const GradSinks& sinks) {
                       auto g = sinks.at(0);
                       for (std::size_t r = 0; r < ys.size(); ++r)
                         g[r * k + static_cast<std::size_t>(ys[r])] += static_cast<float>(gout[0] * dq[r]);
                     });
}

Tensor kl_distill_loss(const Tensor& q_student, const Tensor& q_teacher, float temperature) {
  if (q_student.shape() != q_teacher.shape())
    throw DimensionError("kl_distill_loss: " + shape_str(q_student.shape()) + " vs " + shape_str(q_teacher.shape()));
  if (!(temperature > 0.0f)) throw ParameterError("kl_distill_loss: T must be positive");
  check_distribution(q_student, "kl_distill_loss student");
  check_distribution(q_teacher, "kl_distill_loss teacher");
  const std::size_t n = q_student.dim(0), k = q_student.dim(1);
  const double t2 = static_cast<double>(temperature) * temperature;
  auto qs = q_student.data();
  auto qt = q_teacher.data();
  double total = 0.0;
  std::vector<double> dq(n * k, 0.0);
  for (std::size_t i = 0; i < n * k; ++i) {
    const auto [p, plive] = clamp_prob(qt[i]);
    const auto [s, slive] = clamp_prob(qs[i]);
    total += p * std::log(p / s);
    if (slive) dq[i] = -t2 * p / s / static_cast<double>(n);
  }
  // Teacher is deliberately absent from the recorded inputs.
  return make_result({1}, {static_cast<float>(t2 * total / static_cast<double>(n))}, {q_student},
                     [dq = std::move(dq)](std::span<const float> gout, const GradSinks& sinks) {
                       auto g = sinks.at(0);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<float>(gout[0] * dq[i]);
                     });
}

Tensor l2_hint_loss(const Tensor& f_i, const Tensor& f_c) {
  if (f_i.shape() != f_c.shape() || f_i.rank() != 2)
    throw DimensionError("l2_hint_loss: " + shape_str(f_i.shape()) + " vs " + shape_str(f_c.shape()));
  const std::size_t n = f_i.dim(0);
  auto a = f_i.data();
  auto b = f_c.data();
  double total = 0.0;
  std::vector<float> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    diff[i] = static_cast<float>(d);
    total += d * d;
  }
  const float inv = 2.0f / static_cast<float>(n);
  return make_result({1}, {static_cast<float>(total / static_cast<double>(n))}, {f_i},
                     [diff = std::move(diff), inv](std::span<const float> gout, const GradSinks& sinks) {
                       auto g = sinks.at(0);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[0] * inv * diff[i];
                     });
}

LossTerms total_loss(const ClassifierBundle& bundle, std::span<const int> labels, const LossConfig& cfg) {
  if (bundle.size() == 0) throw ContractError("total_loss: empty classifier bundle");
  LossTerms out;
  const Tensor& teacher_logits = bundle.deepest_logits();
  const Tensor& teacher_hint = bundle.hints.back();
  std::vector<Tensor> terms;

  for (std::size_t i = 0; i < bundle.size(); ++i) {
    const bool deepest = i + 1 == bundle.size();
    const float l1 = deepest ? 0.0f : cfg.lambda1;
    const float l2 = deepest ? 0.0f : cfg.lambda2;
    Tensor fl = focal_loss(softmax_temperature(bundle.logits[i], 1.0f), labels, cfg);
    out.focal += fl.item();
    terms.push_back(scale(fl, 1.0f - l1));
    if (deepest) continue;
    Tensor kl = kl_distill_loss(softmax_temperature(bundle.logits[i], cfg.temperature),
                                softmax_temperature(teacher_logits.detach(), cfg.temperature), cfg.temperature);
    Tensor hint = l2_hint_loss(bundle.hints[i], teacher_hint.detach());
    out.kl += kl.item();
    out.l2 += hint.item();
    terms.push_back(scale(kl, l1));
    terms.push_back(scale(hint, l2));
  }
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  out.total = total;
  return out;
}

}  // namespace mer
