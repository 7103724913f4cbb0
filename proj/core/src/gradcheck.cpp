#include "mer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mer/error.hpp"

namespace mer {

namespace {
thread_local std::uint64_t* t_pattern = nullptr;
constexpr std::uint64_t kPatternSeed = 0xcbf29ce484222325ull;
}  // namespace

ActivationPattern::ActivationPattern() : hash_(kPatternSeed), prev_(t_pattern) { t_pattern = &hash_; }
ActivationPattern::~ActivationPattern() { t_pattern = prev_; }
void ActivationPattern::reset() { hash_ = kPatternSeed; }

std::uint64_t* detail::activation_pattern_sink() { return t_pattern; }

GradCheckReport finite_difference_check_leaf(const std::function<Tensor()>& f, Tensor& leaf, float h, double tol,
                                             const std::vector<std::size_t>& indices) {
  if (!leaf.is_leaf()) throw ContractError("gradient check target must be a leaf");
  const bool had_rg = leaf.requires_grad();
  leaf.set_requires_grad(true);
  leaf.zero_grad();
  Tensor y = f();
  y.backward();
  std::vector<float> analytic = leaf.has_grad() ? std::vector<float>(leaf.grad().begin(), leaf.grad().end())
                                                : std::vector<float>(leaf.numel(), 0.0f);
  leaf.zero_grad();
  leaf.set_requires_grad(false);

  std::vector<std::size_t> idx = indices;
  if (idx.empty()) {
    idx.resize(leaf.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }

  GradCheckReport report;
  auto values = leaf.mutable_data();
  for (std::size_t i : idx) {
    if (i >= values.size()) throw ContractError("gradient check index out of range");
    const float orig = values[i];
    const float up = orig + h;
    const float down = orig - h;
    values[i] = up;
    const double f_up = f().item();
    values[i] = down;
    const double f_down = f().item();
    values[i] = orig;
    const double numeric = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
    const double ad = analytic[i];
    const double err = std::abs(ad - numeric) / std::max({1.0, std::abs(ad), std::abs(numeric)});
    if (report.checked == 0 || err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_index = i;
    }
    ++report.checked;
  }
  leaf.set_requires_grad(had_rg);
  report.passed = report.max_rel_err < tol;
  return report;
}

GradCheckReport finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, float h,
                                        double tol, const std::vector<std::size_t>& indices) {
  Tensor leaf(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
  return finite_difference_check_leaf([&] { return f(leaf); }, leaf, h, tol, indices);
}

GradCheckReport finite_difference_check_smooth(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                               std::size_t count, std::uint64_t seed, float h, double tol,
                                               std::size_t* skipped) {
  std::vector<std::size_t> offsets{0};
  for (const Tensor& leaf : leaves) offsets.push_back(offsets.back() + leaf.numel());
  if (offsets.back() == 0 || count == 0) throw ContractError("gradient check needs non-empty leaves and count > 0");
  auto pattern_of = [&] {
    ActivationPattern probe;
    NoGradGuard guard;
    (void)f();
    return probe.hash();
  };
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, offsets.back() - 1);
  std::vector<std::size_t> chosen;
  std::size_t rejected = 0;
  for (std::size_t draw = 0; draw < 50 * count && chosen.size() < count; ++draw) {
    const std::size_t flat = pick(rng);
    if (std::find(chosen.begin(), chosen.end(), flat) != chosen.end()) continue;
    const auto li = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin()) - 1;
    auto values = leaves[li].mutable_data();
    float& v = values[flat - offsets[li]];
    const float orig = v;
    const std::uint64_t base = pattern_of();
    v = orig + h;
    const std::uint64_t up = pattern_of();
    v = orig - h;
    const std::uint64_t down = pattern_of();
    v = orig;
    if (up == base && down == base)
      chosen.push_back(flat);
    else
      ++rejected;
  }
  if (skipped) *skipped = rejected;
  GradCheckReport report;
  if (chosen.size() < count) {
    report.max_rel_err = 1.0;
    report.passed = false;
    return report;
  }
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    std::vector<std::size_t> local;
    for (std::size_t flat : chosen)
      if (flat >= offsets[li] && flat < offsets[li + 1]) local.push_back(flat - offsets[li]);
    if (local.empty()) continue;
    const GradCheckReport r = finite_difference_check_leaf(f, leaves[li], h, tol, local);
    if (report.checked == 0 || r.max_rel_err > report.max_rel_err) {
      report.max_rel_err = r.max_rel_err;
      report.worst_index = offsets[li] + r.worst_index;
    }
    report.checked += r.checked;
  }
  report.passed = report.max_rel_err < tol;
  return report;
}

}  // namespace mer
