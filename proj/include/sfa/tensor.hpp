// SPDX-License-Identifier: Apache-2.0
//
// Dense rank<=3 tensors with reverse-mode automatic differentiation.
//
// A Tensor is an immutable value handle. Every op allocates a fresh node; when
// any operand requires a gradient the node records its parents and a backward
// closure. Nodes carry a per-thread creation sequence number, and backward()
// replays the reachable nodes in descending sequence order, i.e. the exact
// reverse of recording order.

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sfa {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct DegenerateMaskError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kMaxRank = 3;

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> extents) {
    if (extents.size() == 0 || extents.size() > kMaxRank) {
      throw ShapeError("tensor rank must be in [1, 3]");
    }
    for (std::size_t e : extents) {
      if (e == 0) throw ShapeError("tensor extents must be >= 1");
      dims_[rank_++] = e;
    }
  }
  static Shape of(std::span<const std::size_t> extents) {
    if (extents.empty() || extents.size() > kMaxRank) {
      throw ShapeError("tensor rank must be in [1, 3]");
    }
    Shape s;
    for (std::size_t e : extents) {
      if (e == 0) throw ShapeError("tensor extents must be >= 1");
      s.dims_[s.rank_++] = e;
    }
    return s;
  }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }
  std::vector<std::size_t> extents() const {
    return {dims_.begin(), dims_.begin() + static_cast<std::ptrdiff_t>(rank_)};
  }

  /// Shape with extent 1 at `axis`.
  Shape collapsed(std::size_t axis) const {
    Shape s = *this;
    s.dims_.at(axis) = 1;
    return s;
  }
  Shape with(std::size_t axis, std::size_t extent) const {
    Shape s = *this;
    s.dims_.at(axis) = extent;
    return s;
  }

  /// Product of extents before / after `axis`; views the tensor as
  /// (outer, dims[axis], inner) for axis-wise kernels.
  std::size_t outer(std::size_t axis) const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < axis; ++i) n *= dims_[i];
    return n;
  }
  std::size_t inner(std::size_t axis) const {
    std::size_t n = 1;
    for (std::size_t i = axis + 1; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i) {
      if (a.dims_[i] != b.dims_[i]) return false;
    }
    return true;
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{1, 1, 1};
  std::size_t rank_ = 0;
};

/// Validity mask over one axis. Empty means every position is valid.
class Mask {
 public:
  Mask() = default;
  explicit Mask(std::vector<std::uint8_t> valid) : valid_(std::move(valid)) {}
  static Mask all(std::size_t n) { return Mask(std::vector<std::uint8_t>(n, 1)); }
  /// First `length` of `n` positions valid, the rest padding.
  static Mask prefix(std::size_t n, std::size_t length) {
    std::vector<std::uint8_t> v(n, 0);
    std::fill_n(v.begin(), std::min(n, length), std::uint8_t{1});
    return Mask(std::move(v));
  }

  bool empty() const { return valid_.empty(); }
  std::size_t size() const { return valid_.size(); }
  bool valid(std::size_t i) const { return valid_.empty() || valid_[i] != 0; }
  std::size_t count(std::size_t n) const {
    if (valid_.empty()) return n;
    return static_cast<std::size_t>(std::count_if(
        valid_.begin(), valid_.end(), [](std::uint8_t v) { return v != 0; }));
  }
  void check(std::size_t n, const char* where) const {
    if (!valid_.empty() && valid_.size() != n) {
      throw ShapeError(std::string(where) + ": mask length " +
                       std::to_string(valid_.size()) + " != extent " +
                       std::to_string(n));
    }
    if (count(n) == 0) {
      throw DegenerateMaskError(std::string(where) + ": every position is masked");
    }
  }
  const std::vector<std::uint8_t>& values() const { return valid_; }

 private:
  std::vector<std::uint8_t> valid_;
};

namespace detail {

inline std::uint64_t next_sequence() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline bool& grad_disabled() {
  thread_local bool disabled = false;
  return disabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
  bool is_leaf = true;
  bool backward_done = false;
  bool visit_mark = false;
  std::uint64_t seq = next_sequence();
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled()) { detail::grad_disabled() = true; }
  ~NoGradGuard() { detail::grad_disabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(const Shape& shape) { return constant(shape, T(0)); }
  static Tensor ones(const Shape& shape) { return constant(shape, T(1)); }
  static Tensor constant(const Shape& shape, T value) {
    return Tensor(shape, std::vector<T>(shape.numel(), value));
  }
  /// Uniform in [lo, hi) from a 64-bit Mersenne Twister seeded with `seed`.
  static Tensor uniform(const Shape& shape, T lo, T hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return uniform(shape, lo, hi, rng);
  }
  static Tensor uniform(const Shape& shape, T lo, T hi, std::mt19937_64& rng) {
    std::vector<T> v(shape.numel());
    for (T& x : v) x = lo + (hi - lo) * static_cast<T>(unit(rng));
    return Tensor(shape, std::move(v));
  }

  Tensor(const Shape& shape, std::vector<T> data) : node_(std::make_shared<detail::Node<T>>()) {
    if (shape.rank() == 0) throw ShapeError("tensor needs a shape");
    if (shape.numel() != data.size()) {
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(data);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.rank(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t numel() const { return node_->data.size(); }
  const std::vector<T>& data() const& { return node_->data; }
  std::vector<T> data() && { return node_->data; }
  T item() const {
    if (numel() != 1) throw ContractError("item() on a non-scalar tensor");
    return node_->data[0];
  }
  T at(std::size_t i) const { return node_->data.at(i); }
  T at(std::size_t i, std::size_t j) const { return node_->data.at(i * dim(1) + j); }
  T at(std::size_t i, std::size_t j, std::size_t k) const {
    return node_->data.at((i * dim(1) + j) * dim(2) + k);
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }

  /// Marks a leaf as trainable. Returns *this for chaining.
  Tensor& set_requires_grad(bool on = true) {
    if (!node_->is_leaf) throw ContractError("requires_grad can only be set on leaves");
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; zeros when no backward pass has reached the tensor.
  std::vector<T> grad() const {
    if (node_->grad.empty()) return std::vector<T>(numel(), T(0));
    return node_->grad;
  }
  void zero_grad() const { node_->grad.clear(); }

  /// Overwrites leaf values between graph constructions (optimizer updates,
  /// checkpoint loads). Graph-producing nodes are never writable.
  std::vector<T>& mutable_leaf_data() const {
    if (!node_->is_leaf) throw ContractError("only leaf tensors are writable");
    return node_->data;
  }

  /// Same values, no graph linkage.
  Tensor detach() const { return Tensor(shape(), data()); }

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  static double unit(std::mt19937_64& rng) {
    // 53 random bits mapped to [0, 1); stable across standard libraries.
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

  NodePtr node_;
};

namespace detail {

/// Builds a result node. `backward` receives the result node and pushes its
/// gradient into the parents; it is dropped when no parent needs a gradient.
template <typename T>
Tensor<T> make_result(const Shape& shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward) {
  Tensor<T> out(shape, std::move(data));
  if (grad_disabled()) return out;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (!needs) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  n.is_leaf = false;
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  return out;
}

}  // namespace detail

/// Leaves that received a gradient during one backward pass.
template <typename T>
struct GradMap {
  std::vector<Tensor<T>> leaves;

  bool contains(const Tensor<T>& t) const {
    return std::any_of(leaves.begin(), leaves.end(),
                       [&](const Tensor<T>& l) { return l.node() == t.node(); });
  }
  std::vector<T> of(const Tensor<T>& t) const { return t.grad(); }
};

/// Records the nodes reachable from a root in creation order. backward()
/// consumes it in reverse.
template <typename T>
class GradTape {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  explicit GradTape(const Tensor<T>& root) {
    std::vector<NodePtr> stack{root.node()};
    while (!stack.empty()) {
      NodePtr n = std::move(stack.back());
      stack.pop_back();
      if (!n->requires_grad || n->visit_mark) continue;
      n->visit_mark = true;
      for (const auto& p : n->parents) stack.push_back(p);
      ops_.push_back(std::move(n));
    }
    for (const auto& n : ops_) n->visit_mark = false;
    std::sort(ops_.begin(), ops_.end(),
              [](const NodePtr& a, const NodePtr& b) { return a->seq < b->seq; });
  }

  const std::vector<NodePtr>& recorded() const { return ops_; }

 private:
  std::vector<NodePtr> ops_;
};

/// Propagates d(loss)/d(node) to every reachable leaf with requires_grad.
/// A second backward through the same loss, or into leaves whose gradient
/// has not been reset since an earlier pass, is a contract error.
template <typename T>
GradMap<T> backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  auto& root = *loss.node();
  if (root.backward_done) throw ContractError("backward() already ran for this loss");
  if (!root.requires_grad) throw ContractError("loss does not depend on any trainable leaf");

  GradTape<T> tape(loss);
  const auto& ops = tape.recorded();
  for (const auto& n : ops) {
    if (n->is_leaf && !n->grad.empty()) {
      throw ContractError("leaf gradient was not reset before backward()");
    }
  }
  for (const auto& n : ops) {
    if (!n->is_leaf) n->grad.clear();
  }
  root.grad_buffer()[0] = T(1);
  GradMap<T> out;
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
    auto& n = **it;
    if (n.is_leaf) continue;
    if (!n.grad.empty()) n.backward(n);
  }
  for (const auto& n : ops) {
    if (n->is_leaf) {
      n->grad_buffer();
      out.leaves.push_back(Tensor<T>::from_node(n));
    } else if (n.get() != &root) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  root.backward_done = true;
  return out;
}

}  // namespace sfa
