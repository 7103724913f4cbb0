#include "mer/metrics.hpp"

#include "mer/error.hpp"

namespace mer {

ConfusionMatrix::ConfusionMatrix(std::size_t k, std::vector<long long> cells) : k_(k), cells_(std::move(cells)) {
  if (cells_.size() != k * k) throw DimensionError("confusion matrix needs K*K cells");
  for (long long c : cells_)
    if (c < 0) throw ContractError("confusion matrix cells must be non-negative");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, long long n) {
  if (truth >= k_ || pred >= k_) throw ContractError("confusion matrix index out of range");
  cells_[truth * k_ + pred] += n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw DimensionError("confusion matrices have different class counts");
  for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] += other.cells_[i];
  return *this;
}

long long ConfusionMatrix::total() const {
  long long s = 0;
  for (long long c : cells_) s += c;
  return s;
}

long long ConfusionMatrix::fp(std::size_t i) const {
  long long s = 0;
  for (std::size_t r = 0; r < k_; ++r)
    if (r != i) s += at(r, i);
  return s;
}

long long ConfusionMatrix::fn(std::size_t i) const {
  long long s = 0;
  for (std::size_t c = 0; c < k_; ++c)
    if (c != i) s += at(i, c);
  return s;
}

long long ConfusionMatrix::support(std::size_t i) const { return tp(i) + fn(i); }

double uf1(const ConfusionMatrix& cm, bool literal) {
  if (cm.classes() == 0 || cm.total() == 0) throw ContractError("uf1 of an empty confusion matrix");
  double sum = 0.0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const double tp = static_cast<double>(cm.tp(i));
    const double rest = static_cast<double>(cm.fp(i) + cm.fn(i));
    const double denom = (literal ? tp : 2.0 * tp) + rest;
    if (denom > 0.0) sum += 2.0 * tp / denom;
  }
  return sum / static_cast<double>(cm.classes());
}

double uar(const ConfusionMatrix& cm) {
  if (cm.classes() == 0 || cm.total() == 0) throw ContractError("uar of an empty confusion matrix");
  double sum = 0.0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const long long n = cm.support(i);
    if (n == 0) throw ContractError("uar: class " + std::to_string(i) + " has no samples");
    sum += static_cast<double>(cm.tp(i)) / static_cast<double>(n);
  }
  return sum / static_cast<double>(cm.classes());
}

double uar_present(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const long long n = cm.support(i);
    if (n == 0) continue;
    sum += static_cast<double>(cm.tp(i)) / static_cast<double>(n);
    ++present;
  }
  return present == 0 ? 0.0 : sum / static_cast<double>(present);
}

}  // namespace mer
