#include "lcdg/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace lcdg {

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  if (numel_of(shape) != int64_t(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  node_ = std::make_shared<TensorNode<T>>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape) {
  return Tensor(shape, std::vector<T>(size_t(numel_of(shape)), T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T v) {
  return Tensor(shape, std::vector<T>(size_t(numel_of(shape)), v));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T v) {
  return Tensor(Shape{}, std::vector<T>{v});
}

template <typename T>
Tensor<T> Tensor<T>::randn(const Shape& shape, RngStream& rng, double scale) {
  std::vector<T> v(size_t(numel_of(shape)));
  for (auto& x : v) x = T(rng.normal() * scale);
  return Tensor(shape, std::move(v));
}

template <typename T>
int Tensor<T>::dim(int i) const {
  const Shape& s = shape();
  if (i < 0 || i >= int(s.size()))
    throw ShapeError("dim index " + std::to_string(i) + " out of range for " + shape_str(s));
  return s[size_t(i)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  return values()[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool v) {
  TensorNode<T>& n = check();
  if (v && !n.is_leaf()) throw ValueError("requires_grad can only be set on a leaf tensor");
  n.requires_grad = v;
  return *this;
}

template <typename T>
const std::vector<T>& Tensor<T>::grad() const {
  TensorNode<T>& n = check();
  if (n.grad.empty()) throw ValueError("tensor has no gradient; run backward() first");
  return n.grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  TensorNode<T>& n = check();
  n.grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  const TensorNode<T>& n = check();
  return Tensor(n.shape, n.values);
}

template <typename T>
void Tensor<T>::backward() {
  TensorNode<T>& root = check();
  if (root.values.size() != 1) throw ShapeError("backward() requires a scalar loss");
  if (!root.requires_grad) throw ValueError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS over parent edges.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  struct Frame {
    TensorNode<T>* n;
    size_t next;
  };
  std::vector<Frame> stack;
  if (seen.insert(&root).second) stack.push_back({&root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode<T>* p = f.n->parents[f.next++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  // Interior grads are per-sweep scratch; leaf grads persist and accumulate.
  for (TensorNode<T>* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->values.size(), T(0));
    else n->ensure_grad();
  }
  root.grad[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backward_fn) n->backward_fn(n->grad);
  }
}

template <typename T>
Tensor<T> make_op_output(Shape shape, std::vector<T> values,
                         const std::vector<Tensor<T>>& inputs,
                         std::function<void(const std::vector<T>&)> backward_fn) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs)
    if (in.defined() && in.requires_grad()) needs = true;
  if (!needs) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& in : inputs)
    if (in.defined() && in.requires_grad()) n.parents.push_back(in.node());
  n.backward_fn = std::move(backward_fn);
  return out;
}

template struct TensorNode<float>;
template struct TensorNode<double>;
template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_op_output<float>(Shape, std::vector<float>,
                                             const std::vector<Tensor<float>>&,
                                             std::function<void(const std::vector<float>&)>);
template Tensor<double> make_op_output<double>(Shape, std::vector<double>,
                                               const std::vector<Tensor<double>>&,
                                               std::function<void(const std::vector<double>&)>);

}  // namespace lcdg
