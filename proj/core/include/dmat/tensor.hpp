#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmat {

using Shape = std::vector<int64_t>;

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& m) : std::runtime_error(m) {}
};
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& m) : std::runtime_error(m) {}
};
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = int(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until gradient first flows here
  bool requires_grad = false;
  // set when produced by an op whose inputs carry gradient; such tensors relay
  // gradient even though they are not user-marked leaves
  bool tape_internal = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  bool wants_grad() const { return requires_grad || tape_internal; }
};

// Shared-buffer dense tensor. Copying a Tensor copies the handle, not the
// storage; clone() copies storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(size_t(shape_numel(impl_->shape)), T(0));
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor ones(Shape s) { return full(std::move(s), T(1)); }
  static Tensor full(Shape s, T v) {
    Tensor t(std::move(s));
    for (auto& x : t.impl_->data) x = v;
    return t;
  }
  static Tensor scalar(T v) { return full({1}, v); }
  static Tensor from(Shape s, std::vector<T> data, bool requires_grad = false) {
    if (int64_t(data.size()) != shape_numel(s))
      throw ShapeError("from(): data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(s));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = std::move(s);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return int(impl_->shape.size()); }
  int64_t dim(int i) const {
    if (i < 0) i += ndim();
    return impl_->shape[size_t(i)];
  }
  int64_t numel() const { return int64_t(impl_->data.size()); }

  std::span<T> values() { return impl_->data; }
  std::span<const T> values() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  T item() const {
    if (numel() != 1)
      throw ShapeError("item(): tensor has " + std::to_string(numel()) +
                       " elements, expected 1");
    return impl_->data[0];
  }

  T& at(std::initializer_list<int64_t> idx) {
    auto st = row_major_strides(impl_->shape);
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) off += i * st[k++];
    return impl_->data[size_t(off)];
  }
  T at(std::initializer_list<int64_t> idx) const {
    return const_cast<Tensor*>(this)->at(idx);
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  std::span<const T> grad_view() const { return impl_->grad; }
  void zero_grad() {
    for (auto& g : impl_->grad) g = T(0);
  }

  // storage copy detached from any gradient flow
  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }
  Tensor clone() const {
    Tensor t = detach();
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Reverse-mode tape scoped to one forward pass. Ops append backward closures
// during the forward; backward() replays them once in reverse and then frees
// them (and the tensors they captured).
template <typename T>
class Tape {
 public:
  void record(std::string name, std::function<void()> step) {
    if (consumed_)
      throw ContractError("tape already consumed by backward(); open a new "
                          "tape scope for the next forward pass");
    names_.push_back(std::move(name));
    steps_.push_back(std::move(step));
  }

  void backward(Tensor<T>& loss) {
    if (consumed_)
      throw ContractError("backward() called twice on the same tape");
    if (loss.numel() != 1)
      throw ShapeError("backward(): loss must be scalar, got shape " +
                       shape_str(loss.shape()));
    if (!loss.impl()->wants_grad())
      throw ContractError(
          "backward(): loss is not connected to any requires_grad tensor");
    consumed_ = true;
    loss.grad()[0] = T(1);
    for (size_t i = steps_.size(); i-- > 0;) steps_[i]();
    steps_.clear();
    steps_.shrink_to_fit();
    names_.clear();
  }

  size_t size() const { return steps_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<std::string>& op_names() const { return names_; }

 private:
  std::vector<std::function<void()>> steps_;
  std::vector<std::string> names_;
  bool consumed_ = false;
};

template <typename T>
inline Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

// RAII activation of a fresh tape on this thread
template <typename T>
class TapeScope {
 public:
  TapeScope() : prev_(active_tape<T>()) { active_tape<T>() = &tape_; }
  ~TapeScope() { active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape<T>& tape() { return tape_; }
  void backward(Tensor<T>& loss) { tape_.backward(loss); }

 private:
  Tape<T> tape_;
  Tape<T>* prev_;
};

// marks an op output as gradient-relaying and records the closure
template <typename T>
inline void tape_record(const char* name, bool any_input_wants_grad,
                        Tensor<T>& out, std::function<void()> step) {
  if (!any_input_wants_grad) return;
  out.impl()->tape_internal = true;
  if (Tape<T>* t = active_tape<T>()) t->record(name, std::move(step));
}

}  // namespace dmat
