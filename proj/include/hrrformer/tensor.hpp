#pragma once

// Dense row-major tensor with an optional handle into a reverse-mode graph.
//
// Tensor payloads are immutable once constructed and shared between copies.
// When gradient recording is enabled and any input of an operation requires a
// gradient, the result carries a Node holding the parents and a backward rule.
// grad() walks that graph from a scalar loss in reverse topological order.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hrrformer/error.hpp"
#include "hrrformer/memory.hpp"

namespace hrrformer {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Resolves a possibly negative axis against a rank.
inline std::size_t resolve_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

template <class T>
class Tensor;

namespace autograd {

template <class T>
struct Node {
  // Returns one gradient buffer per parent; entries whose `needs` flag is
  // false may be left empty.
  using Backward = std::function<std::vector<Buffer<T>>(const Buffer<T>& grad_out,
                                                        const std::vector<bool>& needs)>;

  std::string op;
  Shape shape;
  std::vector<std::shared_ptr<Node>> parents;  // null where no gradient flows
  Backward backward;

  bool is_leaf() const noexcept { return !backward; }
};

inline bool& recording_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool is_recording() noexcept { return recording_flag(); }

// Disables graph construction on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(recording_flag()) { recording_flag() = false; }
  ~NoGradGuard() { recording_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace autograd

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<autograd::Node<T>>;

  Tensor() : Tensor(Shape{0}, Buffer<T>{}) {}

  Tensor(Shape shape, Buffer<T> values)
      : shape_(std::move(shape)), data_(std::make_shared<const Buffer<T>>(std::move(values))) {
    if (numel(shape_) != data_->size()) {
      throw DimensionError("shape " + to_string(shape_) + " needs " +
                           std::to_string(numel(shape_)) + " values, got " +
                           std::to_string(data_->size()));
    }
  }

  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(std::move(shape), Buffer<T>(values.begin(), values.end())) {}

  Tensor(Shape shape, std::span<const T> values)
      : Tensor(std::move(shape), Buffer<T>(values.begin(), values.end())) {}

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T value) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, Buffer<T>{value}); }

  // Leaf that accumulates a gradient.
  static Tensor parameter(const Tensor& value) {
    Tensor t = value.detach();
    auto node = std::make_shared<autograd::Node<T>>();
    node->op = "leaf";
    node->shape = t.shape_;
    t.node_ = std::move(node);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_->size(); }
  std::size_t dim(int axis) const { return shape_[resolve_axis(axis, rank())]; }

  std::span<const T> data() const noexcept { return {data_->data(), data_->size()}; }
  const Buffer<T>& buffer() const noexcept { return *data_; }
  std::vector<T> to_vector() const { return {data_->begin(), data_->end()}; }

  T operator[](std::size_t flat) const { return (*data_)[flat]; }

  T at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t d = 0;
    for (std::size_t i : index) {
      if (i >= shape_[d]) throw IndexError("index out of range in at()");
      flat = flat * shape_[d] + i;
      ++d;
    }
    return (*data_)[flat];
  }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const noexcept { return node_ != nullptr; }
  const NodePtr& node() const noexcept { return node_; }

  // Same values, no graph handle.
  Tensor detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  // Used by operation implementations to attach a graph node.
  static Tensor with_node(Shape shape, Buffer<T> values, NodePtr node) {
    Tensor t(std::move(shape), std::move(values));
    t.node_ = std::move(node);
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<const Buffer<T>> data_;
  NodePtr node_;
};

namespace detail {

template <class T>
void check_finite(const char* op, std::span<const T> values) {
  // Exponent-all-ones test on the bit pattern; vectorizes, unlike isfinite.
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  constexpr Bits kExp = static_cast<Bits>(sizeof(T) == 8 ? 0x7ff0000000000000ull : 0x7f800000ull);
  Bits bad = 0;
  for (const T v : values) bad |= static_cast<Bits>((std::bit_cast<Bits>(v) & kExp) == kExp);
  if (bad) throw NonFiniteError(std::string("non-finite value produced by ") + op);
}

// Builds an operation result: validates finiteness and, when any input needs
// a gradient and recording is on, links a node with the given backward rule.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, Buffer<T> values,
                      std::initializer_list<const Tensor<T>*> inputs,
                      typename autograd::Node<T>::Backward backward) {
  check_finite<T>(op, {values.data(), values.size()});
  bool any = false;
  if (autograd::is_recording()) {
    for (const Tensor<T>* in : inputs) any = any || in->requires_grad();
  }
  if (!any) return Tensor<T>(std::move(shape), std::move(values));
  auto node = std::make_shared<autograd::Node<T>>();
  node->op = op;
  node->shape = shape;
  for (const Tensor<T>* in : inputs) node->parents.push_back(in->node());
  node->backward = std::move(backward);
  return Tensor<T>::with_node(std::move(shape), std::move(values), std::move(node));
}

}  // namespace detail

// Gradients of a scalar loss with respect to every tensor on its graph.
template <class T>
class Gradients {
 public:
  bool contains(const Tensor<T>& t) const {
    return t.node() && grads_.count(t.node().get()) != 0;
  }

  // Gradient w.r.t. t; zeros when t does not influence the loss.
  Tensor<T> operator[](const Tensor<T>& t) const {
    if (t.node()) {
      auto it = grads_.find(t.node().get());
      if (it != grads_.end()) return Tensor<T>(t.shape(), it->second);
    }
    return Tensor<T>::zeros(t.shape());
  }

 private:
  template <class U>
  friend Gradients<U> grad(const Tensor<U>& loss);

  std::unordered_map<const autograd::Node<T>*, Buffer<T>> grads_;
};

// Reverse accumulation from a scalar loss. Each node is visited once, in
// reverse topological order. Gradients are kept for leaves only.
template <class T>
Gradients<T> grad(const Tensor<T>& loss) {
  using NodeT = autograd::Node<T>;
  if (loss.size() != 1) {
    throw ContractError("grad() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw ContractError("grad() on a loss that is not on the tape");

  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Gradients<T> result;
  std::unordered_map<NodeT*, Buffer<T>> pending;
  pending.emplace(loss.node().get(), Buffer<T>{T(1)});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    auto found = pending.find(node);
    if (found == pending.end()) continue;
    Buffer<T> g = std::move(found->second);
    pending.erase(found);
    if (node->is_leaf()) {
      result.grads_.emplace(node, std::move(g));
      continue;
    }
    std::vector<bool> needs(node->parents.size());
    for (std::size_t i = 0; i < needs.size(); ++i) needs[i] = node->parents[i] != nullptr;
    std::vector<Buffer<T>> parent_grads = node->backward(g, needs);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      NodeT* parent = node->parents[i].get();
      if (!parent) continue;
      Buffer<T>& pg = parent_grads[i];
      detail::check_finite<T>(node->op.c_str(), {pg.data(), pg.size()});
      auto slot = pending.find(parent);
      if (slot == pending.end()) {
        pending.emplace(parent, std::move(pg));
      } else {
        Buffer<T>& acc = slot->second;
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += pg[k];
      }
    }
  }
  return result;
}

}  // namespace hrrformer
