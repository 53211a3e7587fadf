#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "catv2ton/errors.hpp"
#include "catv2ton/rng.hpp"

namespace catv2ton {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::f32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::f64;
}

/// Tape-recording is on by default; NoGradGuard turns it off for a scope
/// (inference, optimizer updates). The flag is thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' grads.
  std::function<void(Node& self)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array with an optional reverse-mode gradient tape.
///
/// A Tensor is a shared handle: copies alias the same storage. Operations
/// never write into their inputs; they allocate a fresh node and, when any
/// input requires a gradient and recording is enabled, link it to the
/// inputs with a backward closure.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor();
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, double scale = 1.0,
                      bool requires_grad = false);
  static Tensor scalar(T value) { return full({1}, value); }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Propagates d(this)/d(leaf) into every reachable leaf that requires a
  /// gradient. Leaf gradients accumulate across calls; intermediate
  /// gradients are reset at the start of each call.
  void backward() const;

  /// Same storage contents, no tape history, no gradient.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  Tensor reshape(const Shape& shape) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const NodePtr& node() const { return node_; }

  /// Builds an op result. If recording is active and some input requires a
  /// gradient, `backward` is attached; otherwise it is dropped.
  static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                            std::function<void(detail::Node<T>&)> backward);

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  NodePtr node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Element-wise precision change; the result has no tape history.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.data().begin(), x.data().end());
  return Tensor<To>(x.shape(), std::move(out));
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace catv2ton
