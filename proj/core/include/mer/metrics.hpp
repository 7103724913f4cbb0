#pragma once

#include <cstddef>
#include <vector>

namespace mer {

/// K x K counts; rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t k) : k_(k), cells_(k * k, 0) {}
  ConfusionMatrix(std::size_t k, std::vector<long long> cells);

  std::size_t classes() const { return k_; }
  long long at(std::size_t truth, std::size_t pred) const { return cells_[truth * k_ + pred]; }
  void add(std::size_t truth, std::size_t pred, long long n = 1);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix& other) const = default;

  long long total() const;
  long long tp(std::size_t i) const { return at(i, i); }
  long long fp(std::size_t i) const;
  long long fn(std::size_t i) const;
  /// Row sum: number of samples whose true class is i.
  long long support(std::size_t i) const;

  const std::vector<long long>& cells() const { return cells_; }

 private:
  std::size_t k_ = 0;
  std::vector<long long> cells_;
};

/// Mean per-class F1 = 2TP / (2TP + FP + FN); classes with no true or
/// predicted instances score 0. `literal` uses 2TP / (TP + FP + FN).
double uf1(const ConfusionMatrix& cm, bool literal = false);

/// Mean per-class recall. Every class needs at least one true instance.
double uar(const ConfusionMatrix& cm);

/// Mean recall over the classes that occur; 0 for an empty matrix.
double uar_present(const ConfusionMatrix& cm);

}  // namespace mer
