#include "mstts/autodiff/tensor.h"

#include <algorithm>
#include <sstream>

namespace mstts::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : impl_(std::make_shared<TensorImpl<T>>()) {
  for (auto d : shape) {
    if (d == 0) throw EmptyInputError("tensor extents must be positive, got " + shape_str(shape));
  }
  impl_->data.assign(numel(shape), T(0));
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorImpl<T>>()) {
  for (auto d : shape) {
    if (d == 0) throw EmptyInputError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl_->data = std::move(data);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
void Tensor<T>::set_trainable(bool flag) {
  if (!impl_->op.empty()) throw ContractError("only leaf tensors can change trainability");
  impl_->trainable = flag;
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, impl_->data);
}

namespace {
template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

thread_local bool g_check_finite = false;

std::string& corrupted_op() {
  static std::string op;
  return op;
}
}  // namespace

template <typename T>
Tape<T>::Tape() : previous_(active_tape<T>()) {
  active_tape<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
  active_tape<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_tape<T>();
}

template <typename T>
void Tape<T>::record(std::string_view op, const Tensor<T>& out, BackwardFn fn) {
  out.impl()->requires_grad = true;
  out.impl()->op = op;
  entries_.push_back(Entry{op, out.impl_ptr(), std::move(fn)});
}

template <typename T>
bool Tape<T>::contains(const TensorImpl<T>* node) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [node](const Entry& e) { return e.out.get() == node; });
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (entries_.empty() || entries_.back().out.get() != loss.impl()) {
    if (!contains(loss.impl())) {
      throw ContractError("backward: loss was not produced on the active tape");
    }
  }
  for (auto& e : entries_) e.out->grad.clear();
  loss.impl()->grad.assign(1, T(1));

  const std::string& corrupted = corrupted_op();
  std::vector<T> scaled;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->out->grad.empty()) continue;
    if (!corrupted.empty() && it->op == corrupted) {
      scaled = it->out->grad;
      for (auto& g : scaled) g *= T(1.25);
      it->backward(scaled);
    } else {
      it->backward(it->out->grad);
    }
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) throw ContractError("backward called with no active tape");
  tape->backward(loss);
}

FiniteCheckScope::FiniteCheckScope() : previous_(g_check_finite) { g_check_finite = true; }
FiniteCheckScope::~FiniteCheckScope() { g_check_finite = previous_; }
bool FiniteCheckScope::enabled() { return g_check_finite; }

namespace testing {
void set_corrupted_backward(std::string op) { corrupted_op() = std::move(op); }
const std::string& corrupted_backward() { return corrupted_op(); }
}  // namespace testing

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace mstts::ad
