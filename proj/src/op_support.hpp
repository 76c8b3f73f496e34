#pragma once

// Internal helpers shared by op implementations.

#include <functional>
#include <initializer_list>
#include <span>
#include <string>

#include "dualmamba/tensor.hpp"

namespace dualmamba::detail {

// The active tape, if any operand requires grad; nullptr otherwise.
template <typename T>
Tape<T>* tape_for(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

// Gradient buffer of `s`, zero-allocated on first use.
template <typename T>
std::span<T> grad_of(TensorStorage<T>& s) {
  if (s.grad.empty()) s.grad.assign(s.value.size(), T{0});
  return s.grad;
}

template <typename T>
bool wants_grad(const std::shared_ptr<TensorStorage<T>>& s) {
  return s != nullptr && s->requires_grad;
}

template <typename T>
void attach(Tensor<T>& out, Tape<T>* tape, std::function<void()> fn) {
  out.storage().requires_grad = true;
  out.storage().tape = tape;
  tape->record(std::move(fn));
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail);

inline void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) shape_fail(op, detail);
}

}  // namespace dualmamba::detail
