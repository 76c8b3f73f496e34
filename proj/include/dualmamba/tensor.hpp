#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dualmamba/error.hpp"

namespace dualmamba {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Tape;

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  Tape<T>* tape = nullptr;  // tape that recorded the producing op, if any
};

/// Dense row-major array with optional participation in reverse-mode autodiff.
///
/// Tensors are shared handles: copying a Tensor aliases the same storage.
/// Use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : impl_(std::make_shared<TensorStorage<T>>()) {
    impl_->value.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorStorage<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_string(shape) + " holds " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->value = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->value.size(); }

  std::span<T> data() { return impl_->value; }
  std::span<const T> data() const { return impl_->value; }
  T& operator[](std::size_t i) { return impl_->value[i]; }
  const T& operator[](std::size_t i) const { return impl_->value[i]; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
    }
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy of the values; the copy does not require grad.
  Tensor clone() const { return Tensor(shape(), impl_->value); }

  TensorStorage<T>& storage() const { return *impl_; }
  const std::shared_ptr<TensorStorage<T>>& handle() const { return impl_; }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

/// Ordered record of differentiable operations.
///
/// Ops executed while a tape is active (see GradScope) and touching at least
/// one tensor that requires grad append a backward closure here. backward()
/// replays the closures in exact reverse order and then clears the tape.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return entries_.size(); }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw AutodiffError("backward: loss must be a scalar tensor");
    }
    if (loss.storage().tape != this) {
      throw AutodiffError("backward: loss was not produced under this tape");
    }
    if (entries_.empty()) {
      throw AutodiffError("backward: tape is empty or already consumed");
    }
    auto& g = loss.storage().grad;
    g.assign(1, T{1});
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      (*it)();
    }
    entries_.clear();
  }

  static Tape* active() { return active_; }

 private:
  template <typename U>
  friend class GradScope;

  std::vector<std::function<void()>> entries_;
  static inline thread_local Tape* active_ = nullptr;
};

// Makes `tape` the recording tape of the current thread for the scope's lifetime.
template <typename T>
class GradScope {
 public:
  explicit GradScope(Tape<T>& tape) : previous_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
  ~GradScope() { Tape<T>::active_ = previous_; }
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Back-propagates from a scalar loss through the tape that produced it.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw AutodiffError("backward: loss must be a scalar tensor");
  }
  Tape<T>* tape = loss.storage().tape;
  if (tape == nullptr) {
    throw AutodiffError("backward: loss was not produced under an active tape");
  }
  tape->backward(loss);
}

}  // namespace dualmamba
