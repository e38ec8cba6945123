#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "structfill/rng.hpp"

namespace sfill {

// Rank-4 (batch, channel, height, width) shape. Scalars are (1,1,1,1).
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  Shape() = default;
  Shape(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {}

  int64_t numel() const {
    return static_cast<int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

template <class T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, always zero-filled on first touch
  bool requires_grad = false;
};

// Value handle over shared storage; copies alias the same buffer.
template <class T>
class Tensor {
  std::shared_ptr<TensorStorage<T>> st_;

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape s, bool requires_grad = false)
      : st_(std::make_shared<TensorStorage<T>>()) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
      throw TensorError("Tensor: negative dimension in shape " + s.str());
    st_->shape = s;
    st_->data.assign(static_cast<size_t>(s.numel()), T(0));
    st_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v) {
    Tensor t(Shape(1, 1, 1, 1));
    t.data()[0] = v;
    return t;
  }

  static Tensor full(Shape s, T v) {
    Tensor t(s);
    std::fill(t.data(), t.data() + t.numel(), v);
    return t;
  }

  static Tensor from(Shape s, const std::vector<T>& values) {
    Tensor t(s);
    if (static_cast<int64_t>(values.size()) != s.numel())
      throw TensorError("Tensor::from: " + std::to_string(values.size()) +
                        " values for shape " + s.str());
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  static Tensor randn(Shape s, Rng& rng, T stddev = T(1), T mean = T(0)) {
    Tensor t(s);
    T* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
      p[i] = static_cast<T>(rng.normal(static_cast<double>(mean), static_cast<double>(stddev)));
    return t;
  }

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return st_->shape; }
  int64_t numel() const { return st_->shape.numel(); }

  T* data() { return st_->data.data(); }
  const T* data() const { return st_->data.data(); }

  bool requires_grad() const { return st_->requires_grad; }
  void set_requires_grad(bool v) { st_->requires_grad = v; }

  bool grad_allocated() const { return !st_->grad.empty(); }

  // Lazily allocated, zero-initialized gradient buffer of the same shape.
  T* grad() {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), T(0));
    return st_->grad.data();
  }
  const T* grad() const {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), T(0));
    return st_->grad.data();
  }

  void zero_grad() {
    if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), T(0));
  }

  int64_t index(int in, int ic, int iy, int ix) const {
    const Shape& s = st_->shape;
    return ((static_cast<int64_t>(in) * s.c + ic) * s.h + iy) * s.w + ix;
  }
  T at(int in, int ic, int iy, int ix) const { return data()[index(in, ic, iy, ix)]; }
  T& at(int in, int ic, int iy, int ix) { return data()[index(in, ic, iy, ix)]; }

  // New handle over the same buffer that never receives gradients.
  Tensor detach() const {
    Tensor t;
    t.st_ = std::make_shared<TensorStorage<T>>();
    t.st_->shape = st_->shape;
    t.st_->data = st_->data;
    t.st_->requires_grad = false;
    return t;
  }

  Tensor clone() const {
    Tensor t(st_->shape, st_->requires_grad);
    t.st_->data = st_->data;
    return t;
  }

  bool all_finite() const {
    const T* p = data();
    for (int64_t i = 0; i < numel(); ++i)
      if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
  }

  bool same_storage(const Tensor& o) const { return st_ == o.st_; }
};

// Reverse-mode tape. Ops record backward closures in execution order; a
// single-owner context per forward/backward pass. Independent tapes on
// different threads never interact (the active tape is thread-local).
template <class T>
class Tape {
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
  inline static thread_local Tape* current_ = nullptr;

 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  // RAII activation of a tape as the recording target on this thread.
  class Scope {
    Tape* prev_;

   public:
    explicit Scope(Tape& t) : prev_(current_) { current_ = &t; }
    ~Scope() { current_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
  };

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  // Propagates d(loss)/d(tensor) into every requires_grad tensor recorded
  // under this tape. Gradients accumulate additively, so each recorded node
  // runs exactly once and fan-out sums contributions.
  void backward(Tensor<T> loss) {
    if (loss.numel() != 1)
      throw TensorError("backward: loss must be scalar, got shape " + loss.shape().str());
    if (consumed_)
      throw TensorError("backward: tape already consumed; reset() before reuse");
    consumed_ = true;
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }
};

// True when the op must propagate gradients through this tensor.
template <class T>
inline bool on_grad_path(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

template <class T>
inline bool recording() {
  return Tape<T>::current() != nullptr;
}

// Marks op outputs: an output carries gradients iff a tape is active and some
// input does.
template <class T>
inline void mark_output(Tensor<T>& out, bool any_input_grad) {
  out.set_requires_grad(recording<T>() && any_input_grad);
}

template <class T>
inline void record_node(std::function<void()> fn) {
  Tape<T>::current()->record(std::move(fn));
}

}  // namespace sfill
