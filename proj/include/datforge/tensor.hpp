// Dense tensor, named parameter sets, and the reverse-mode tape.
//
// Tensors are shared handles to value/grad storage. Forward operations never
// mutate their inputs, so a tensor is immutable once it has been produced and
// may be read concurrently; gradient buffers are only touched during a
// single-threaded backward pass.
#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "datforge/common.hpp"

namespace datforge::numerics {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) raise(ErrorKind::shape, "negative extent ", d, " in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {
template <std::floating_point T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until ensure_grad()
  bool requires_grad = false;
};
}  // namespace detail

template <std::floating_point T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
      raise(ErrorKind::shape, "tensor data size ", data.size(), " does not match shape ",
            shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = static_cast<std::size_t>(numel(shape));
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    auto n = static_cast<std::size_t>(numel(shape));
    return from(std::move(shape), std::vector<T>(n, fill), requires_grad);
  }

  static Tensor scalar_of(T v, bool requires_grad = false) {
    return from(Shape{}, std::vector<T>{v}, requires_grad);
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  void ensure_grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
  }
  std::span<T> grad() {
    ensure_grad();
    return node_->grad;
  }
  std::span<const T> grad() const {
    if (!has_grad()) raise(ErrorKind::missing, "tensor has no gradient buffer");
    return node_->grad;
  }
  void drop_grad() { node_->grad.clear(); }

  T scalar() const {
    if (size() != 1) raise(ErrorKind::shape, "expected scalar tensor, shape ", shape_str(shape()));
    return node_->value[0];
  }

  // Deep copy of values; the copy carries no gradient and no graph history.
  Tensor clone() const {
    Tensor t = from(node_->shape, node_->value, node_->requires_grad);
    return t;
  }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  std::uint64_t content_hash(std::uint64_t state = 0xcbf29ce484222325ull) const {
    state = fnv1a64(node_->shape.data(), node_->shape.size() * sizeof(int), state);
    return fnv1a64(node_->value.data(), node_->value.size() * sizeof(T), state);
  }

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

// Named, insertion-ordered parameter set (theta and theta-bar).
template <std::floating_point T>
class ModelState {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> tensor) {
    if (index_.count(name)) raise(ErrorKind::argument, "duplicate parameter name '", name, "'");
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(tensor));
    return items_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) raise(ErrorKind::missing, "unknown parameter '", name, "'");
    return items_[it->second].second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) raise(ErrorKind::missing, "unknown parameter '", name, "'");
    return items_[it->second].second;
  }

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grads() {
    for (auto& [name, t] : items_) t.drop_grad();
  }

  void set_requires_grad(bool rg) {
    for (auto& [name, t] : items_) t.set_requires_grad(rg);
  }

  ModelState clone() const {
    ModelState out;
    for (const auto& [name, t] : items_) out.add(name, t.clone());
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : items_) {
      h = fnv1a64(name, h);
      h = t.content_hash(h);
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Records one backward closure per forward operation; backward() replays them
// in exact reverse order of recording.
template <std::floating_point T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  std::size_t size() const { return ops_.size(); }

  void backward(Tensor<T>& loss) {
    if (loss.size() != 1)
      raise(ErrorKind::shape, "backward requires a scalar loss, shape ", shape_str(loss.shape()));
    if (!std::isfinite(static_cast<double>(loss.scalar())))
      raise(ErrorKind::numeric, "backward on non-finite loss");
    loss.ensure_grad();
    loss.grad()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

}  // namespace datforge::numerics
