#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mstts::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand extents are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a sequence operation receives zero time steps.
class EmptyInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller breaks a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when a primitive produces NaN or Inf while finite checking is on.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string primitive, const std::string& what)
      : std::runtime_error(what), primitive_(std::move(primitive)) {}
  const std::string& primitive() const { return primitive_; }

 private:
  std::string primitive_;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  // Leaf flag set on parameters. Frozen parameters keep it false.
  bool trainable = false;
  // True for trainable leaves and for recorded op outputs.
  bool requires_grad = false;
  std::string_view op;

  void accumulate(std::size_t i, T g) {
    if (grad.empty()) grad.assign(data.size(), T(0));
    grad[i] += g;
  }
  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor(Shape{1}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T operator[](std::size_t i) const { return impl_->data[i]; }
  T at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape[1] + c]; }
  T item() const;

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; empty span when nothing has been accumulated.
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool trainable() const { return impl_->trainable; }
  void set_trainable(bool flag);
  bool requires_grad() const { return impl_->requires_grad; }
  std::string_view op() const { return impl_->op; }

  /// Deep copy of the values, detached from any graph, not trainable.
  Tensor clone() const;

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Append-only record of differentiable operations. Constructing a Tape makes
/// it the active tape for its thread and element type; destruction restores
/// the previous one. Ops record only when a tape is active and at least one
/// operand requires a gradient.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  struct Entry {
    std::string_view op;
    std::shared_ptr<TensorImpl<T>> out;
    BackwardFn backward;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::string_view op, const Tensor<T>& out, BackwardFn fn);
  bool contains(const TensorImpl<T>* node) const;
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Reverse sweep from a scalar loss. Intermediate gradients are reset on
  /// every call; leaf gradients accumulate until zero_grad.
  void backward(const Tensor<T>& loss);

 private:
  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
};

/// Runs backward on the active tape.
template <typename T>
void backward(const Tensor<T>& loss);

/// While alive, every primitive output is scanned for NaN/Inf and a
/// NumericalError naming the primitive is thrown on the first hit.
class FiniteCheckScope {
 public:
  FiniteCheckScope();
  ~FiniteCheckScope();
  FiniteCheckScope(const FiniteCheckScope&) = delete;
  FiniteCheckScope& operator=(const FiniteCheckScope&) = delete;
  static bool enabled();

 private:
  bool previous_;
};

namespace testing {
/// Test fixture hook: scales the incoming gradient of every tape entry whose
/// primitive name matches, which corrupts that primitive's backward pass.
/// Empty string disables the fault.
void set_corrupted_backward(std::string op);
const std::string& corrupted_backward();
}  // namespace testing

}  // namespace mstts::ad
