#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "amom/error.hpp"

namespace amom {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

}  // namespace detail

template <class T>
class Tape;

// Dense row-major array. Copies share storage (handle semantics, like the
// parameter handles of most autograd engines); use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Node = detail::TensorNode<T>;

  Tensor() : node_(std::make_shared<Node>()) { node_->data.assign(1, T{0}); }

  explicit Tensor(Shape shape, T fill = T{0}) : node_(std::make_shared<Node>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
    if (values.size() != shape_numel(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  Tensor clone() const {
    Tensor t(shape(), node_->data);
    return t;
  }

  // Copy of the values, cut from any tape.
  Tensor detach() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    return t;
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Reverse-mode tape. Constructing a Tape makes it the active tape of the
// calling thread until it is destroyed; primitives record a backward closure
// on it whenever one of their inputs requires a gradient.
template <class T>
class Tape {
 public:
  using Backward = std::function<void()>;

  Tape() : previous_(slot()) { slot() = this; }
  ~Tape() { slot() = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return slot(); }

  void record(Backward fn) { entries_.push_back(std::move(fn)); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Accumulates d(loss)/d(leaf) into the grad buffer of every leaf that
  // requires a gradient, then clears the tape.
  void backprop(const Tensor<T>& loss) {
    if (loss.numel() != 1 || loss.rank() != 0) {
      throw ShapeError("backprop: loss must be a scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad() || loss.is_leaf()) {
      throw Error("backprop: loss is not attached to the active tape");
    }
    loss.node()->ensure_grad()[0] += T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  static Tape*& slot() {
    thread_local Tape* current = nullptr;
    return current;
  }

  Tape* previous_;
  std::vector<Backward> entries_;
};

// Backprop on the active tape of the calling thread.
template <class T>
void backprop(const Tensor<T>& loss) {
  auto* tape = Tape<T>::active();
  if (!tape) throw Error("backprop: no active tape");
  tape->backprop(loss);
}

namespace detail {

template <class T, class... Ts>
Tape<T>* recording(const Tensor<T>& first, const Ts&... rest) {
  auto* tape = Tape<T>::active();
  if (!tape) return nullptr;
  bool any = first.requires_grad();
  ((any = any || rest.requires_grad()), ...);
  return any ? tape : nullptr;
}

template <class T>
void mark_interior(Tensor<T>& out) {
  out.node()->requires_grad = true;
  out.node()->leaf = false;
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (const T v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
  }
}

// Accumulate `g` into the gradient of `n` when it takes part in differentiation.
template <class T>
bool wants_grad(const std::shared_ptr<TensorNode<T>>& n) {
  return n->requires_grad;
}

}  // namespace detail

}  // namespace amom
