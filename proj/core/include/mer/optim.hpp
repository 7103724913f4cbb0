#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mer/params.hpp"

namespace mer {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  float eps = 1e-8f;
  float weight_decay = 5e-4f;
};

/// Adam with bias correction and decoupled weight decay
/// (w <- w - lr*wd*w, then the Adam update).
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every parameter that holds a gradient. Parameters without a
  /// gradient are left untouched and keep their moments.
  void step(ParamStore& params);

  /// Drops the moments of `name` (used after a head is re-created).
  void reset(const std::string& name) { moments_.erase(name); }

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  struct Moments {
    std::vector<float> m, v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace mer
