#include "mer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

#include "mer/error.hpp"

namespace mer {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local int t_no_grad_depth = 0;

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor rank must be at least 1");
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(shape));
}

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, std::vector<float> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::span<float> GradSinks::at(std::size_t i) const {
  auto& impl = *inputs_[i];
  if (!impl.requires_grad) return {};
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0f);
  return impl.grad;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad)
    : impl_(new_impl(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  validate_shape(shape);
  std::vector<float> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, float stddev, bool requires_grad) {
  validate_shape(shape);
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const float> Tensor::data() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

std::span<float> Tensor::mutable_data() {
  if (!impl_) throw ContractError("use of undefined tensor");
  if (impl_->grad_fn) throw ContractError("in-place write to a non-leaf tensor");
  return impl_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ContractError("use of undefined tensor");
  if (impl_->grad_fn) throw ContractError("requires_grad can only be toggled on leaves");
  impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->grad_fn; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

std::span<float> Tensor::mutable_grad() {
  if (!impl_) throw ContractError("use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, impl_->requires_grad); }

void Tensor::backward() const {
  if (numel() != 1) throw ContractError("backward() requires a scalar, got shape " + shape_str(shape()));
  if (!impl_->requires_grad) throw ContractError("backward() on a tensor that does not require grad");

  // Collect every recorded producer reachable from the loss.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<detail::TensorImpl*> stack{impl_.get()};
  while (!stack.empty()) {
    auto* t = stack.back();
    stack.pop_back();
    if (!t->grad_fn || !seen.insert(t).second) continue;
    order.push_back(t);
    for (const auto& in : t->grad_fn->inputs)
      if (in->grad_fn) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->grad_fn->seq > b->grad_fn->seq; });

  if (impl_->grad.empty()) impl_->grad.assign(1, 0.0f);
  impl_->grad[0] += 1.0f;
  for (auto* t : order) {
    if (t->grad.empty()) continue;
    GradSinks sinks(t->grad_fn->inputs);
    t->grad_fn->backward(t->grad, sinks);
  }
}

Tensor make_result(Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs, BackwardFn fn) {
  bool needs = false;
  if (t_no_grad_depth == 0)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  auto impl = new_impl(std::move(shape), std::move(values), needs);
  if (needs) {
    auto node = std::make_shared<detail::Node>();
    node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(fn);
    impl->grad_fn = std::move(node);
  }
  return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<float> values, std::initializer_list<Tensor> inputs, BackwardFn fn) {
  return make_result(std::move(shape), std::move(values), std::vector<Tensor>(inputs), std::move(fn));
}

NoGradGuard::NoGradGuard() { ++t_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --t_no_grad_depth; }
bool grad_enabled() { return t_no_grad_depth == 0; }

#if defined(__SSE2__)
// FTZ (bit 15) and DAZ (bit 6).
constexpr unsigned int kFlushBits = 0x8040;
FlushDenormalsGuard::FlushDenormalsGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | kFlushBits); }
FlushDenormalsGuard::~FlushDenormalsGuard() { _mm_setcsr(saved_); }
#else
FlushDenormalsGuard::FlushDenormalsGuard() = default;
FlushDenormalsGuard::~FlushDenormalsGuard() = default;
#endif

void check_finite(const Tensor& t, const std::string& where) {
  for (float v : t.data())
    if (!std::isfinite(v)) throw NumericalError("non-finite value in " + where);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
}

}  // namespace mer
