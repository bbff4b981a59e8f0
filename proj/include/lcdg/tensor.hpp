#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lcdg/error.hpp"
#include "lcdg/rng.hpp"

namespace lcdg {

using Shape = std::vector<int>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

bool grad_enabled();

// RAII switch that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // sized lazily; persists on leaves across backward calls
  bool requires_grad = false;
  // Graph edges. parents holds only inputs that require grad; backward_fn
  // accumulates into their grad buffers given this node's output grad.
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(const std::vector<T>&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
  }
};

// Value-semantics handle over a shared graph node. Copies alias storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values);
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, T v);
  static Tensor scalar(T v);
  static Tensor randn(const Shape& shape, RngStream& rng, double scale = 1.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return check().shape; }
  int dim(int i) const;
  int ndim() const { return int(check().shape.size()); }
  int64_t numel() const { return int64_t(check().values.size()); }

  std::vector<T>& values() { return check().values; }
  const std::vector<T>& values() const { return check().values; }
  T item() const;

  bool requires_grad() const { return check().requires_grad; }
  Tensor& set_requires_grad(bool v);
  bool has_grad() const { return !check().grad.empty(); }
  const std::vector<T>& grad() const;
  void zero_grad();

  // Copies values into a fresh graph-free node.
  Tensor detach() const;

  // Reverse-mode sweep from a scalar. Leaf grads accumulate across calls;
  // interior grads are reset per sweep.
  void backward();

  std::shared_ptr<TensorNode<T>>& node() { return node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  TensorNode<T>& check() const {
    if (!node_) throw ValueError("tensor is undefined");
    return *node_;
  }
  std::shared_ptr<TensorNode<T>> node_;
};

// Builds an op output node. requires_grad and graph edges are set only when
// recording is enabled and some input requires grad; backward_fn may then
// capture input nodes and saved activations by value.
template <typename T>
Tensor<T> make_op_output(Shape shape, std::vector<T> values,
                         const std::vector<Tensor<T>>& inputs,
                         std::function<void(const std::vector<T>&)> backward_fn);

extern template struct TensorNode<float>;
extern template struct TensorNode<double>;
extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace lcdg
