#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

}  // namespace detail

/// Gradient buffers of a node's inputs, handed to a backward function.
/// `at(i)` is empty when input i does not require a gradient.
class GradSinks {
 public:
  explicit GradSinks(const std::vector<std::shared_ptr<detail::TensorImpl>>& inputs) : inputs_(inputs) {}
  std::span<float> at(std::size_t i) const;
  bool wants(std::size_t i) const { return inputs_[i]->requires_grad; }

 private:
  const std::vector<std::shared_ptr<detail::TensorImpl>>& inputs_;
};

using BackwardFn = std::function<void(std::span<const float> grad_out, const GradSinks& sinks)>;

namespace detail {

struct Node {
  std::uint64_t seq = 0;  // global execution order
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major f32 tensor with reverse-mode autodiff.
///
/// Tensors are shared handles: copying a Tensor aliases the same storage and
/// graph position. Use `clone()` for an independent leaf copy and `detach()`
/// to cut a value out of the graph.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, float stddev = 1.0f, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  /// Mutable view of the values. Only valid on leaves (no recorded producer).
  std::span<float> mutable_data();
  float item() const;
  float operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;

  /// Runs reverse-mode accumulation from this scalar into every tensor
  /// reachable through the recorded graph.
  void backward() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, std::vector<float>, std::initializer_list<Tensor>, BackwardFn);
  friend Tensor make_result(Shape, std::vector<float>, const std::vector<Tensor>&, BackwardFn);

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Builds the output of an operation. When any input requires a gradient the
/// result is linked into the graph and `fn` will be called during backward
/// with the output gradient; otherwise `fn` is discarded.
Tensor make_result(Shape shape, std::vector<float> values, std::initializer_list<Tensor> inputs, BackwardFn fn);
Tensor make_result(Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs, BackwardFn fn);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

/// Flushes subnormal floats to zero on the current thread while alive.
class FlushDenormalsGuard {
 public:
  FlushDenormalsGuard();
  ~FlushDenormalsGuard();
  FlushDenormalsGuard(const FlushDenormalsGuard&) = delete;
  FlushDenormalsGuard& operator=(const FlushDenormalsGuard&) = delete;

 private:
  unsigned int saved_ = 0;
};

/// Throws NumericalError if any value is NaN or infinite.
void check_finite(const Tensor& t, const std::string& where);

/// True when both tensors have equal shapes and bit-identical values.
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace mer
