#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "mer/tensor.hpp"

namespace mer {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = true;
};

/// Compares reverse-mode gradients against central differences.
///
/// Per element: rel_err = |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). The
/// difference quotient uses the step actually realised in f32 and is
/// accumulated in f64. `indices` restricts the check to a subset of elements
/// (all elements when empty).
GradCheckReport finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                        float h = 1e-3f, double tol = 1e-4,
                                        const std::vector<std::size_t>& indices = {});

/// Same check for a leaf that `f` reads implicitly (e.g. a model weight). The
/// leaf is perturbed in place and restored afterwards; its gradient slot is
/// overwritten.
GradCheckReport finite_difference_check_leaf(const std::function<Tensor()>& f, Tensor& leaf, float h = 1e-3f,
                                             double tol = 1e-4, const std::vector<std::size_t>& indices = {});

/// While alive, relu and max-pool ops on this thread fold their branch
/// decisions (relu masks, pooling argmaxes) into a running hash. Nests.
class ActivationPattern {
 public:
  ActivationPattern();
  ~ActivationPattern();
  ActivationPattern(const ActivationPattern&) = delete;
  ActivationPattern& operator=(const ActivationPattern&) = delete;

  std::uint64_t hash() const { return hash_; }
  void reset();

 private:
  std::uint64_t hash_;
  std::uint64_t* prev_;
};

namespace detail {
/// Active pattern hash of this thread, or nullptr.
std::uint64_t* activation_pattern_sink();
inline void fold_pattern(std::uint64_t& h, std::uint64_t v) { h = (h ^ v) * 0x100000001b3ull; }
}  // namespace detail

/// Checks `count` elements drawn uniformly from all elements of `leaves`,
/// rejecting draws whose +-h stencil changes the activation pattern of `f` (a
/// relu or max-pool kink lies inside the stencil). Fails with max_rel_err 1
/// when fewer than `count` smooth elements turn up within 50 * count draws.
/// `skipped` receives the number of rejected draws; worst_index is flat over
/// the concatenated leaves.
GradCheckReport finite_difference_check_smooth(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                               std::size_t count, std::uint64_t seed, float h = 1e-3f,
                                               double tol = 1e-4, std::size_t* skipped = nullptr);

}  // namespace mer
