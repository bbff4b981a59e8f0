#include "lcdg/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace lcdg {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": operand shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
}

template <typename T>
void axpy(std::vector<T>& dst, const std::vector<T>& src, T scale) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c,
          bool accumulate) {
  using Map = Eigen::Map<MatRM<T>>;
  using CMap = Eigen::Map<const MatRM<T>>;
  Map C(c, m, n);
  if (!trans_a && !trans_b) {
    CMap A(a, m, k), B(b, k, n);
    if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
  } else if (!trans_a && trans_b) {
    CMap A(a, m, k), B(b, n, k);
    if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
  } else if (trans_a && !trans_b) {
    CMap A(a, k, m), B(b, k, n);
    if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
  } else {
    CMap A(a, k, m), B(b, n, k);
    if (accumulate) C.noalias() += A.transpose() * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto an = a.node(), bn = b.node();
  bool da = a.requires_grad(), db = b.requires_grad();
  return make_op_output<T>(a.shape(), std::move(out), {a, b}, [an, bn, da, db](const std::vector<T>& g) {
    if (da) { an->ensure_grad(); axpy(an->grad, g, T(1)); }
    if (db) { bn->ensure_grad(); axpy(bn->grad, g, T(1)); }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node(), bn = b.node();
  bool da = a.requires_grad(), db = b.requires_grad();
  return make_op_output<T>(a.shape(), std::move(out), {a, b}, [an, bn, da, db](const std::vector<T>& g) {
    if (da) { an->ensure_grad(); axpy(an->grad, g, T(1)); }
    if (db) { bn->ensure_grad(); axpy(bn->grad, g, T(-1)); }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto an = a.node(), bn = b.node();
  bool da = a.requires_grad(), db = b.requires_grad();
  return make_op_output<T>(a.shape(), std::move(out), {a, b}, [an, bn, da, db](const std::vector<T>& g) {
    if (da) {
      an->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->values[i];
    }
    if (db) {
      bn->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->values[i];
    }
  });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= s;
  auto an = a.node();
  bool da = a.requires_grad();
  return make_op_output<T>(a.shape(), std::move(out), {a}, [an, da, s](const std::vector<T>& g) {
    if (da) { an->ensure_grad(); axpy(an->grad, g, s); }
  });
}

template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& e) {
  if (x.ndim() != 4) throw ShapeError("add_rowwise: x must be 4D, got " + shape_str(x.shape()));
  if (e.ndim() != 2) throw ShapeError("add_rowwise: e must be 2D, got " + shape_str(e.shape()));
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (e.dim(0) != N || e.dim(1) != C)
    throw ShapeError("add_rowwise: e shape " + shape_str(e.shape()) + " does not match x " +
                     shape_str(x.shape()));
  std::vector<T> out(x.values());
  const auto& ev = e.values();
  int64_t hw = int64_t(H) * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T v = ev[size_t(n) * C + c];
      T* p = out.data() + (int64_t(n) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) p[i] += v;
    }
  auto xn = x.node(), en = e.node();
  bool dx = x.requires_grad(), de = e.requires_grad();
  return make_op_output<T>(x.shape(), std::move(out), {x, e},
                           [xn, en, dx, de, N, C, hw](const std::vector<T>& g) {
    if (dx) { xn->ensure_grad(); axpy(xn->grad, g, T(1)); }
    if (de) {
      en->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T* p = g.data() + (int64_t(n) * C + c) * hw;
          T acc = T(0);
          for (int64_t i = 0; i < hw; ++i) acc += p[i];
          en->grad[size_t(n) * C + c] += acc;
        }
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  auto xn = x.node();
  bool dx = x.requires_grad();
  return make_op_output<T>(x.shape(), std::move(out), {x}, [xn, dx](const std::vector<T>& g) {
    if (!dx) return;
    xn->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i)
      if (xn->values[i] > T(0)) xn->grad[i] += g[i];
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  std::vector<T> out(x.values().size());
  const auto& xv = x.values();
  for (size_t i = 0; i < out.size(); ++i) {
    T s = T(1) / (T(1) + std::exp(-xv[i]));
    out[i] = xv[i] * s;
  }
  auto xn = x.node();
  bool dx = x.requires_grad();
  return make_op_output<T>(x.shape(), std::move(out), {x}, [xn, dx](const std::vector<T>& g) {
    if (!dx) return;
    xn->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) {
      T v = xn->values[i];
      T s = T(1) / (T(1) + std::exp(-v));
      xn->grad[i] += g[i] * s * (T(1) + v * (T(1) - s));
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis < 0 || axis >= int(s0.size()))
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  int axis_total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != s0.size())
      throw ShapeError("concat: rank mismatch between " + shape_str(s0) + " and " + shape_str(s));
    for (size_t d = 0; d < s.size(); ++d)
      if (int(d) != axis && s[d] != s0[d])
        throw ShapeError("concat: dimension " + std::to_string(d) + " differs: " + shape_str(s0) +
                         " vs " + shape_str(s));
    axis_total += s[size_t(axis)];
  }
  Shape out_shape = s0;
  out_shape[size_t(axis)] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[size_t(d)];
  for (size_t d = size_t(axis) + 1; d < s0.size(); ++d) inner *= s0[d];

  std::vector<T> out(size_t(numel_of(out_shape)));
  int64_t out_row = int64_t(axis_total) * inner;
  int64_t offset = 0;
  for (const auto& x : xs) {
    int64_t rows = int64_t(x.shape()[size_t(axis)]) * inner;
    const auto& xv = x.values();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * out_row + offset, xv.data() + o * rows, size_t(rows) * sizeof(T));
    offset += rows;
  }

  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  std::vector<int64_t> rows_per;
  for (const auto& x : xs) {
    nodes.push_back(x.node());
    rows_per.push_back(int64_t(x.shape()[size_t(axis)]) * inner);
  }
  return make_op_output<T>(out_shape, std::move(out), xs,
                           [nodes, rows_per, outer, out_row](const std::vector<T>& g) {
    int64_t offset = 0;
    for (size_t i = 0; i < nodes.size(); ++i) {
      auto& n = nodes[i];
      if (n->requires_grad) {
        n->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = g.data() + o * out_row + offset;
          T* dst = n->grad.data() + o * rows_per[i];
          for (int64_t r = 0; r < rows_per[i]; ++r) dst[r] += src[r];
        }
      }
      offset += rows_per[i];
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.ndim() != 2) throw ShapeError("linear: x must be 2D, got " + shape_str(x.shape()));
  if (w.ndim() != 2) throw ShapeError("linear: w must be 2D, got " + shape_str(w.shape()));
  int N = x.dim(0), D = x.dim(1), E = w.dim(1);
  if (w.dim(0) != D)
    throw ShapeError("linear: input features " + std::to_string(D) +
                     " do not match weight rows " + std::to_string(w.dim(0)));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != E))
    throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match output dim " +
                     std::to_string(E));

  std::vector<T> out(size_t(N) * E);
  gemm<T>(false, false, N, E, D, x.values().data(), w.values().data(), out.data(), false);
  if (b.defined()) {
    const auto& bv = b.values();
    for (int n = 0; n < N; ++n)
      for (int e = 0; e < E; ++e) out[size_t(n) * E + e] += bv[size_t(e)];
  }

  auto xn = x.node(), wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  bool dx = x.requires_grad(), dw = w.requires_grad();
  bool db = b.defined() && b.requires_grad();
  std::vector<Tensor<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_op_output<T>(Shape{N, E}, std::move(out), inputs,
                           [xn, wn, bn, dx, dw, db, N, D, E](const std::vector<T>& g) {
    if (dx) {
      xn->ensure_grad();
      gemm<T>(false, true, N, D, E, g.data(), wn->values.data(), xn->grad.data(), true);
    }
    if (dw) {
      wn->ensure_grad();
      gemm<T>(true, false, D, E, N, xn->values.data(), g.data(), wn->grad.data(), true);
    }
    if (db) {
      bn->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int e = 0; e < E; ++e) bn->grad[size_t(e)] += g[size_t(n) * E + e];
    }
  });
}

namespace {

// Expands one sample into (Cin*K*K) x (OH*OW) patch columns.
template <typename T>
void im2col(const T* x, int C, int H, int W, int K, int stride, int pad, int OH, int OW, T* cols) {
  int64_t ohw = int64_t(OH) * OW;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        T* dst = cols + ((int64_t(c) * K + ky) * K + kx) * ohw;
        const T* src = x + int64_t(c) * H * W;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < OW; ++ox) dst[int64_t(oy) * OW + ox] = T(0);
            continue;
          }
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride + kx - pad;
            dst[int64_t(oy) * OW + ox] = (ix >= 0 && ix < W) ? src[int64_t(iy) * W + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int K, int stride, int pad, int OH, int OW,
                T* dx) {
  int64_t ohw = int64_t(OH) * OW;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        const T* src = cols + ((int64_t(c) * K + ky) * K + kx) * ohw;
        T* dst = dx + int64_t(c) * H * W;
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < W) dst[int64_t(iy) * W + ix] += src[int64_t(oy) * OW + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int padding) {
  if (x.ndim() != 4) throw ShapeError("conv2d: x must be 4D (N,C,H,W), got " + shape_str(x.shape()));
  if (w.ndim() != 4) throw ShapeError("conv2d: w must be 4D (O,I,K,K), got " + shape_str(w.shape()));
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int O = w.dim(0), I = w.dim(1), K = w.dim(2);
  if (w.dim(3) != K)
    throw ShapeError("conv2d: kernel is not square: " + shape_str(w.shape()));
  if (I != C)
    throw ShapeError("conv2d: input channels " + std::to_string(C) +
                     " do not match weight input channels " + std::to_string(I));
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValueError("conv2d: padding must be >= 0");
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != O))
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape()) + " does not match out channels " +
                     std::to_string(O));
  int OH = (H + 2 * padding - K) / stride + 1;
  int OW = (W + 2 * padding - K) / stride + 1;
  if (H + 2 * padding < K || W + 2 * padding < K || OH < 1 || OW < 1)
    throw ShapeError("conv2d: kernel " + std::to_string(K) + " exceeds padded input " +
                     std::to_string(H + 2 * padding) + "x" + std::to_string(W + 2 * padding));

  int64_t rows = int64_t(C) * K * K;
  int64_t ohw = int64_t(OH) * OW;
  std::vector<T> cols(size_t(N) * rows * ohw);
  std::vector<T> out(size_t(N) * O * ohw);
  for (int n = 0; n < N; ++n) {
    T* cols_n = cols.data() + int64_t(n) * rows * ohw;
    im2col(x.values().data() + int64_t(n) * C * H * W, C, H, W, K, stride, padding, OH, OW, cols_n);
    gemm<T>(false, false, O, int(ohw), int(rows), w.values().data(), cols_n,
            out.data() + int64_t(n) * O * ohw, false);
  }
  if (b.defined()) {
    const auto& bv = b.values();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) {
        T* p = out.data() + (int64_t(n) * O + o) * ohw;
        for (int64_t i = 0; i < ohw; ++i) p[i] += bv[size_t(o)];
      }
  }

  auto xn = x.node(), wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  bool dx = x.requires_grad(), dw = w.requires_grad();
  bool db = b.defined() && b.requires_grad();
  std::vector<Tensor<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  // cols is kept for the weight/input backward GEMMs.
  auto saved = std::make_shared<std::vector<T>>();
  if (dx || dw) *saved = std::move(cols);
  return make_op_output<T>(
      Shape{N, O, OH, OW}, std::move(out), inputs,
      [xn, wn, bn, dx, dw, db, saved, N, C, H, W, O, K, stride, padding, OH, OW, rows,
       ohw](const std::vector<T>& g) {
        if (db) {
          bn->ensure_grad();
          for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o) {
              const T* p = g.data() + (int64_t(n) * O + o) * ohw;
              T acc = T(0);
              for (int64_t i = 0; i < ohw; ++i) acc += p[i];
              bn->grad[size_t(o)] += acc;
            }
        }
        if (dw) wn->ensure_grad();
        if (dx) xn->ensure_grad();
        std::vector<T> dcols;
        if (dx) dcols.resize(size_t(rows) * ohw);
        for (int n = 0; n < N; ++n) {
          const T* g_n = g.data() + int64_t(n) * O * ohw;
          const T* cols_n = saved->data() + int64_t(n) * rows * ohw;
          if (dw)
            gemm<T>(false, true, O, int(rows), int(ohw), g_n, cols_n, wn->grad.data(), true);
          if (dx) {
            gemm<T>(true, false, int(rows), int(ohw), O, wn->values.data(), g_n, dcols.data(),
                    false);
            col2im_add(dcols.data(), C, H, W, K, stride, padding, OH, OW,
                       xn->grad.data() + int64_t(n) * C * H * W);
          }
        }
      });
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, NormMode mode, T momentum, T eps) {
  if (x.ndim() != 4) throw ShapeError("batchnorm2d: x must be 4D, got " + shape_str(x.shape()));
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
    throw ShapeError("batchnorm2d: gamma/beta must be (C); C=" + std::to_string(C));
  if (state.running_mean.empty()) state.reset(C);
  if (int(state.running_mean.size()) != C)
    throw ShapeError("batchnorm2d: state channels " + std::to_string(state.running_mean.size()) +
                     " do not match input channels " + std::to_string(C));

  int64_t hw = int64_t(H) * W;
  int64_t cnt = int64_t(N) * hw;
  const auto& xv = x.values();
  std::vector<T> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));

  if (mode != NormMode::eval) {
    bool update = mode == NormMode::train;
    for (int c = 0; c < C; ++c) {
      double m = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = xv.data() + (int64_t(n) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) m += double(p[i]);
      }
      m /= double(cnt);
      double v = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = xv.data() + (int64_t(n) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          double d = double(p[i]) - m;
          v += d * d;
        }
      }
      v /= double(cnt);
      mean[size_t(c)] = T(m);
      invstd[size_t(c)] = T(1.0 / std::sqrt(v + double(eps)));
      if (update) {
        double unbiased = cnt > 1 ? v * double(cnt) / double(cnt - 1) : v;
        state.running_mean[size_t(c)] =
            (T(1) - momentum) * state.running_mean[size_t(c)] + momentum * T(m);
        state.running_var[size_t(c)] =
            (T(1) - momentum) * state.running_var[size_t(c)] + momentum * T(unbiased);
      }
    }
    if (update) state.initialized = true;
  } else {
    if (!state.initialized)
      throw ValueError("batchnorm2d: running statistics uninitialized; train before eval");
    for (int c = 0; c < C; ++c) {
      mean[size_t(c)] = state.running_mean[size_t(c)];
      invstd[size_t(c)] = T(1) / T(std::sqrt(double(state.running_var[size_t(c)]) + double(eps)));
    }
  }

  std::vector<T> xhat(xv.size());
  std::vector<T> out(xv.size());
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = xv.data() + (int64_t(n) * C + c) * hw;
      T* xh = xhat.data() + (int64_t(n) * C + c) * hw;
      T* po = out.data() + (int64_t(n) * C + c) * hw;
      T m = mean[size_t(c)], is = invstd[size_t(c)], ga = gv[size_t(c)], be = bv[size_t(c)];
      for (int64_t i = 0; i < hw; ++i) {
        xh[i] = (p[i] - m) * is;
        po[i] = ga * xh[i] + be;
      }
    }

  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  bool dx = x.requires_grad(), dg = gamma.requires_grad(), db = beta.requires_grad();
  bool train = mode != NormMode::eval;
  auto saved_xhat = std::make_shared<std::vector<T>>();
  if (dx || dg) *saved_xhat = std::move(xhat);
  auto saved_invstd = std::make_shared<std::vector<T>>(std::move(invstd));
  return make_op_output<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, dx, dg, db, train, saved_xhat, saved_invstd, N, C, hw,
       cnt](const std::vector<T>& g) {
        const auto& xh = *saved_xhat;
        const auto& is = *saved_invstd;
        if (dg) gn->ensure_grad();
        if (db) bn->ensure_grad();
        if (dg || db) {
          for (int c = 0; c < C; ++c) {
            double sg = 0, sgx = 0;
            for (int n = 0; n < N; ++n) {
              const T* pg = g.data() + (int64_t(n) * C + c) * hw;
              const T* px = xh.data() + (int64_t(n) * C + c) * hw;
              for (int64_t i = 0; i < hw; ++i) {
                sg += double(pg[i]);
                sgx += double(pg[i]) * double(px[i]);
              }
            }
            if (dg) gn->grad[size_t(c)] += T(sgx);
            if (db) bn->grad[size_t(c)] += T(sg);
          }
        }
        if (!dx) return;
        xn->ensure_grad();
        for (int c = 0; c < C; ++c) {
          T ga = gn->values[size_t(c)];
          if (!train) {
            T k = ga * is[size_t(c)];
            for (int n = 0; n < N; ++n) {
              const T* pg = g.data() + (int64_t(n) * C + c) * hw;
              T* pd = xn->grad.data() + (int64_t(n) * C + c) * hw;
              for (int64_t i = 0; i < hw; ++i) pd[i] += k * pg[i];
            }
            continue;
          }
          double sg = 0, sgx = 0;
          for (int n = 0; n < N; ++n) {
            const T* pg = g.data() + (int64_t(n) * C + c) * hw;
            const T* px = xh.data() + (int64_t(n) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              sg += double(pg[i]);
              sgx += double(pg[i]) * double(px[i]);
            }
          }
          double mg = sg / double(cnt), mgx = sgx / double(cnt);
          T k = ga * is[size_t(c)];
          for (int n = 0; n < N; ++n) {
            const T* pg = g.data() + (int64_t(n) * C + c) * hw;
            const T* px = xh.data() + (int64_t(n) * C + c) * hw;
            T* pd = xn->grad.data() + (int64_t(n) * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i)
              pd[i] += k * (pg[i] - T(mg) - px[i] * T(mgx));
          }
        }
      });
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& x, int scale, UpsampleMode mode) {
  if (x.ndim() != 4) throw ShapeError("upsample: x must be 4D, got " + shape_str(x.shape()));
  if (scale < 1) throw ValueError("upsample: scale must be >= 1");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int OH = H * scale, OW = W * scale;
  const auto& xv = x.values();
  std::vector<T> out(size_t(N) * C * OH * OW);

  // Sparse interpolation stencil: per output pixel up to 4 (input index, weight) taps.
  struct Tap { int iy, ix; T wy, wx; };
  std::vector<Tap> taps(size_t(OH) * OW);
  if (mode == UpsampleMode::nearest) {
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox)
        taps[size_t(oy) * OW + ox] = {oy / scale, ox / scale, T(1), T(1)};
  } else {
    // Corner-aligned bilinear; scale 1 reduces to identity.
    auto src = [](int o, int in_size, int out_size) {
      if (out_size == 1) return 0.0;
      return double(o) * double(in_size - 1) / double(out_size - 1);
    };
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        double sy = src(oy, H, OH), sx = src(ox, W, OW);
        int iy = std::min(int(sy), H - 1), ix = std::min(int(sx), W - 1);
        taps[size_t(oy) * OW + ox] = {iy, ix, T(sy - iy), T(sx - ix)};
      }
  }

  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* src = xv.data() + (int64_t(n) * C + c) * H * W;
      T* dst = out.data() + (int64_t(n) * C + c) * OH * OW;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          const Tap& t = taps[size_t(oy) * OW + ox];
          if (mode == UpsampleMode::nearest) {
            dst[int64_t(oy) * OW + ox] = src[int64_t(t.iy) * W + t.ix];
          } else {
            int iy1 = std::min(t.iy + 1, H - 1), ix1 = std::min(t.ix + 1, W - 1);
            T fy = t.wy, fx = t.wx;
            T v00 = src[int64_t(t.iy) * W + t.ix], v01 = src[int64_t(t.iy) * W + ix1];
            T v10 = src[int64_t(iy1) * W + t.ix], v11 = src[int64_t(iy1) * W + ix1];
            dst[int64_t(oy) * OW + ox] = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                                         fy * ((T(1) - fx) * v10 + fx * v11);
          }
        }
    }

  auto xn = x.node();
  bool dx = x.requires_grad();
  auto saved_taps = std::make_shared<std::vector<Tap>>(std::move(taps));
  return make_op_output<T>(
      Shape{N, C, OH, OW}, std::move(out), {x},
      [xn, dx, saved_taps, N, C, H, W, OH, OW, mode](const std::vector<T>& g) {
        if (!dx) return;
        xn->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            T* dst = xn->grad.data() + (int64_t(n) * C + c) * H * W;
            const T* src = g.data() + (int64_t(n) * C + c) * OH * OW;
            for (int oy = 0; oy < OH; ++oy)
              for (int ox = 0; ox < OW; ++ox) {
                const Tap& t = (*saved_taps)[size_t(oy) * OW + ox];
                T gv = src[int64_t(oy) * OW + ox];
                if (mode == UpsampleMode::nearest) {
                  dst[int64_t(t.iy) * W + t.ix] += gv;
                } else {
                  int iy1 = std::min(t.iy + 1, H - 1), ix1 = std::min(t.ix + 1, W - 1);
                  T fy = t.wy, fx = t.wx;
                  dst[int64_t(t.iy) * W + t.ix] += gv * (T(1) - fy) * (T(1) - fx);
                  dst[int64_t(t.iy) * W + ix1] += gv * (T(1) - fy) * fx;
                  dst[int64_t(iy1) * W + t.ix] += gv * fy * (T(1) - fx);
                  dst[int64_t(iy1) * W + ix1] += gv * fy * fx;
                }
              }
          }
      });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw ShapeError("embedding_lookup: table must be 2D");
  int V = table.dim(0), E = table.dim(1);
  int N = int(ids.size());
  for (int id : ids)
    if (id < 0 || id >= V)
      throw ValueError("embedding_lookup: id " + std::to_string(id) + " outside table of size " +
                       std::to_string(V));
  std::vector<T> out(size_t(N) * E);
  const auto& tv = table.values();
  for (int n = 0; n < N; ++n)
    std::memcpy(out.data() + size_t(n) * E, tv.data() + size_t(ids[size_t(n)]) * E,
                size_t(E) * sizeof(T));
  auto tn = table.node();
  bool dt = table.requires_grad();
  return make_op_output<T>(Shape{N, E}, std::move(out), {table},
                           [tn, dt, ids, E](const std::vector<T>& g) {
    if (!dt) return;
    tn->ensure_grad();
    for (size_t n = 0; n < ids.size(); ++n) {
      T* dst = tn->grad.data() + size_t(ids[n]) * E;
      const T* src = g.data() + n * E;
      for (int e = 0; e < E; ++e) dst[e] += src[e];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.values()) acc += double(v);
  auto xn = x.node();
  bool dx = x.requires_grad();
  return make_op_output<T>(Shape{}, {T(acc)}, {x}, [xn, dx](const std::vector<T>& g) {
    if (!dx) return;
    xn->ensure_grad();
    for (auto& d : xn->grad) d += g[0];
  });
}

template <typename T>
Tensor<T> global_avg_pool2d(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ShapeError("global_avg_pool2d: x must be 4D");
  int N = x.dim(0), C = x.dim(1);
  int64_t hw = int64_t(x.dim(2)) * x.dim(3);
  std::vector<T> out(static_cast<size_t>(N) * C);
  const auto& xv = x.values();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = xv.data() + (int64_t(n) * C + c) * hw;
      double acc = 0;
      for (int64_t i = 0; i < hw; ++i) acc += double(p[i]);
      out[size_t(n) * C + c] = T(acc / double(hw));
    }
  auto xn = x.node();
  bool dx = x.requires_grad();
  return make_op_output<T>(Shape{N, C}, std::move(out), {x},
                           [xn, dx, N, C, hw](const std::vector<T>& g) {
                             if (!dx) return;
                             xn->ensure_grad();
                             T inv = T(1.0 / double(hw));
                             for (int n = 0; n < N; ++n)
                               for (int c = 0; c < C; ++c) {
                                 T gv = g[size_t(n) * C + c] * inv;
                                 T* d = xn->grad.data() + (int64_t(n) * C + c) * hw;
                                 for (int64_t i = 0; i < hw; ++i) d[i] += gv;
                               }
                           });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mse");
  const auto& av = a.values();
  const auto& bv = b.values();
  double acc = 0;
  for (size_t i = 0; i < av.size(); ++i) {
    double d = double(av[i]) - double(bv[i]);
    acc += d * d;
  }
  T n = T(av.size());
  auto an = a.node(), bn = b.node();
  bool da = a.requires_grad(), db = b.requires_grad();
  return make_op_output<T>(Shape{}, {T(acc / double(av.size()))}, {a, b},
                           [an, bn, da, db, n](const std::vector<T>& g) {
    T k = T(2) * g[0] / n;
    if (da) {
      an->ensure_grad();
      for (size_t i = 0; i < an->grad.size(); ++i)
        an->grad[i] += k * (an->values[i] - bn->values[i]);
    }
    if (db) {
      bn->ensure_grad();
      for (size_t i = 0; i < bn->grad.size(); ++i)
        bn->grad[i] += k * (bn->values[i] - an->values[i]);
    }
  });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy: logits must be 2D");
  int N = logits.dim(0), K = logits.dim(1);
  if (int(labels.size()) != N)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(N) + " rows");
  const auto& lv = logits.values();
  auto probs = std::make_shared<std::vector<T>>(lv.size());
  double loss = 0;
  for (int n = 0; n < N; ++n) {
    int y = labels[size_t(n)];
    if (y < 0 || y >= K)
      throw ValueError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                       std::to_string(K) + ")");
    const T* row = lv.data() + size_t(n) * K;
    double m = double(row[0]);
    for (int k = 1; k < K; ++k) m = std::max(m, double(row[k]));
    double z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(double(row[k]) - m);
    double lse = m + std::log(z);
    loss += lse - double(row[y]);
    for (int k = 0; k < K; ++k)
      (*probs)[size_t(n) * K + k] = T(std::exp(double(row[k]) - lse));
  }
  auto ln = logits.node();
  bool dl = logits.requires_grad();
  return make_op_output<T>(Shape{}, {T(loss / N)}, {logits},
                           [ln, dl, probs, labels, N, K](const std::vector<T>& g) {
    if (!dl) return;
    ln->ensure_grad();
    T k0 = g[0] / T(N);
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) {
        T p = (*probs)[size_t(n) * K + k];
        ln->grad[size_t(n) * K + k] += k0 * (p - T(labels[size_t(n)] == k ? 1 : 0));
      }
  });
}

#define LCDG_INSTANTIATE_OPS(T)                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scalar_mul(const Tensor<T>&, T);                                      \
  template Tensor<T> add_rowwise(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> relu(const Tensor<T>&);                                               \
  template Tensor<T> silu(const Tensor<T>&);                                               \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                 BatchNormState<T>&, NormMode, T, T);                      \
  template Tensor<T> upsample(const Tensor<T>&, int, UpsampleMode);                        \
  template Tensor<T> embedding_lookup(const Tensor<T>&, const std::vector<int>&);          \
  template Tensor<T> sum(const Tensor<T>&);                                                \
  template Tensor<T> global_avg_pool2d(const Tensor<T>&);                                  \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, const std::vector<int>&);     \
  template void gemm(bool, bool, int, int, int, const T*, const T*, T*, bool);

LCDG_INSTANTIATE_OPS(float)
LCDG_INSTANTIATE_OPS(double)
#undef LCDG_INSTANTIATE_OPS

}  // namespace lcdg
