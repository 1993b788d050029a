#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "octforce/common.hpp"

namespace octforce::ad {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

// Value-semantics handle to a shared storage node. Gradient buffers are
// allocated lazily on first touch and accumulate until zero_grad().
template <typename T>
class Tensor {
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until requested
    bool wants_grad = false;
    std::uint64_t id = next_id();
  };

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool wants_grad = false) {
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value.assign(numel(t.n_->shape), T(0));
    t.n_->wants_grad = wants_grad;
    return t;
  }

  static Tensor full(Shape shape, T v, bool wants_grad = false) {
    Tensor t = zeros(std::move(shape), wants_grad);
    for (auto& x : t.n_->value) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool wants_grad = false) {
    if (numel(shape) != values.size())
      throw ShapeError("Tensor::from: " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(values);
    t.n_->wants_grad = wants_grad;
    return t;
  }

  static Tensor scalar(T v, bool wants_grad = false) { return from({1}, {v}, wants_grad); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return n_->value.size(); }

  const T* data() const { return n_->value.data(); }
  T* data() { return n_->value.data(); }
  const std::vector<T>& values() const { return n_->value; }
  std::vector<T>& values() { return n_->value; }
  T item() const {
    if (size() != 1) throw ShapeError("item(): tensor has " + std::to_string(size()) + " elements");
    return n_->value[0];
  }

  bool wants_grad() const { return n_->wants_grad; }
  void set_wants_grad(bool b) { n_->wants_grad = b; }

  bool has_grad() const { return !n_->grad.empty(); }

  // Lazily allocates a zeroed gradient buffer.
  T* grad_data() {
    if (n_->grad.empty()) n_->grad.assign(n_->value.size(), T(0));
    return n_->grad.data();
  }
  const std::vector<T>& grad() const {
    if (n_->grad.empty()) n_->grad.assign(n_->value.size(), T(0));
    return n_->grad;
  }
  void zero_grad() {
    for (auto& g : n_->grad) g = T(0);
  }

  std::uint64_t node_id() const { return n_->id; }

  bool same_storage(const Tensor& other) const { return n_ == other.n_; }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  std::shared_ptr<Node> n_;
};

// Dynamic tape: ops are recorded in execution order, backward replays the
// closures in reverse. One tape per training step; recording is scoped with
// TapeScope so evaluation passes stay off the tape entirely.
template <typename T>
class Tape {
 public:
  struct Record {
    std::vector<std::uint64_t> parents;
    std::function<void()> backward_fn;
  };

  void record(std::vector<std::uint64_t> parents, std::function<void()> fn) {
    ops_.push_back(Record{std::move(parents), std::move(fn)});
  }

  std::size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }
  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the recorded closures in reverse.
  // Calling twice without zeroing grads accumulates, by design.
  void backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    loss.grad_data()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward_fn();
  }

  static Tape*& current() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

 private:
  std::vector<Record> ops_;
};

template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current()) { Tape<T>::current() = &tape; }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// Suspends recording for the duration of the scope (validation / inference).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : prev_(Tape<T>::current()) { Tape<T>::current() = nullptr; }
  ~NoGradScope() { Tape<T>::current() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

// Free-function form: differentiates loss on the active tape.
template <typename T>
inline void backward(const Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::current();
  if (!tape) throw InvalidArgument("backward: no active tape");
  tape->backward(loss);
}

namespace detail {

template <typename T>
inline bool tracing(std::initializer_list<const Tensor<T>*> parents) {
  if (Tape<T>::current() == nullptr) return false;
  for (const Tensor<T>* p : parents)
    if (p->defined() && p->wants_grad()) return true;
  return false;
}

template <typename T>
inline void record(std::initializer_list<const Tensor<T>*> parents, std::function<void()> fn) {
  std::vector<std::uint64_t> ids;
  ids.reserve(parents.size());
  for (const Tensor<T>* p : parents)
    if (p->defined()) ids.push_back(p->node_id());
  Tape<T>::current()->record(std::move(ids), std::move(fn));
}

}  // namespace detail

}  // namespace octforce::ad
