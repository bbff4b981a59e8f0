#pragma once

#include <cstdint>
#include <vector>

#include "lcdg/tensor.hpp"

namespace lcdg {

enum class UpsampleMode { nearest, bilinear };
// batch_frozen normalizes with the current batch's statistics (like train)
// but leaves the running averages untouched — for held-out evaluation.
enum class NormMode { train, eval, batch_frozen };

// Per-layer BatchNorm running statistics. Lives outside the autodiff graph;
// train-mode forward mutates it. eval before the first train step is an error.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  bool initialized = false;

  void reset(int channels) {
    running_mean.assign(size_t(channels), T(0));
    running_var.assign(size_t(channels), T(1));
    initialized = false;
  }
};

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scalar_mul(const Tensor<T>& a, T s);

// Adds e[n,c] to every spatial position of x[n,c,:,:].
template <typename T> Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& e);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);

// x: (N,D), w: (D,E), b: (E) or undefined for no bias.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// x: (N,Cin,H,W), w: (Cout,Cin,K,K), b: (Cout) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int stride = 1, int padding = 0);

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, NormMode mode,
                      T momentum = T(0.1), T eps = T(1e-5));

template <typename T>
Tensor<T> upsample(const Tensor<T>& x, int scale, UpsampleMode mode);

// table: (V,E); ids index rows. Backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids);

template <typename T> Tensor<T> sum(const Tensor<T>& x);

// (N,C,H,W) -> (N,C) spatial mean.
template <typename T> Tensor<T> global_avg_pool2d(const Tensor<T>& x);
template <typename T> Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

// logits: (N,K); labels in [0,K). Mean negative log-likelihood.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

// Row-major GEMM helpers shared by ops and metrics. C = alpha*op(A)*op(B) (+C).
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate);

#define LCDG_EXTERN_OPS(T)                                                                \
  extern template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                      \
  extern template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                      \
  extern template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                      \
  extern template Tensor<T> scalar_mul(const Tensor<T>&, T);                              \
  extern template Tensor<T> add_rowwise(const Tensor<T>&, const Tensor<T>&);              \
  extern template Tensor<T> relu(const Tensor<T>&);                                       \
  extern template Tensor<T> silu(const Tensor<T>&);                                       \
  extern template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                   \
  extern template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  extern template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                   int, int);                                             \
  extern template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&,               \
                                        const Tensor<T>&, BatchNormState<T>&, NormMode,   \
                                        T, T);                                            \
  extern template Tensor<T> upsample(const Tensor<T>&, int, UpsampleMode);                \
  extern template Tensor<T> embedding_lookup(const Tensor<T>&, const std::vector<int>&);  \
  extern template Tensor<T> sum(const Tensor<T>&);                                        \
  extern template Tensor<T> global_avg_pool2d(const Tensor<T>&);                          \
  extern template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                      \
  extern template Tensor<T> softmax_cross_entropy(const Tensor<T>&, const std::vector<int>&); \
  extern template void gemm(bool, bool, int, int, int, const T*, const T*, T*, bool);

LCDG_EXTERN_OPS(float)
LCDG_EXTERN_OPS(double)
#undef LCDG_EXTERN_OPS

}  // namespace lcdg
