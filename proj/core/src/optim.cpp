#include "mer/optim.hpp"

#include <cmath>

namespace mer {

void Adam::step(ParamStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  const float step_size = static_cast<float>(cfg_.lr / bc1);
  const float sqrt_bc2 = static_cast<float>(std::sqrt(bc2));
  const float decay = 1.0f - cfg_.lr * cfg_.weight_decay;

  for (auto& [name, w] : params.mutable_entries()) {
    if (!w.has_grad()) continue;
    auto g = w.grad();
    auto x = w.mutable_data();
    auto& mo = moments_[name];
    if (mo.m.size() != x.size()) {
      mo.m.assign(x.size(), 0.0f);
      mo.v.assign(x.size(), 0.0f);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] *= decay;
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0f - cfg_.beta1) * g[i];
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
      x[i] -= step_size * mo.m[i] / (std::sqrt(mo.v[i]) / sqrt_bc2 + cfg_.eps);
    }
  }
}

}  // namespace mer
