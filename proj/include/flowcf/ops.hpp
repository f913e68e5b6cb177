#pragma once

// Primitive differentiable operations on Tensor<T>. Each op computes its
// forward value eagerly and records a backward closure that accumulates
// into the parents' gradient buffers. GEMM-shaped inner loops are handed
// to Eigen; batch-level loops use OpenMP with disjoint writes so results
// are bitwise identical for any thread count.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "flowcf/tensor.hpp"

namespace flowcf {

namespace detail {

template <typename T>
using EigenMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EigenMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const EigenMat<T>>;

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                             const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
inline void check_matrix(const Tensor<T>& x, const char* op) {
  if (x.ndim() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     shape_str(x.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor<T>::make(
      a.shape(), std::move(out), {a, b}, "add", [a, b](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> ta = a, tb = b;
        if (ta.requires_grad()) {
          auto ga = ta.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tb.requires_grad()) {
          auto gb = tb.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor<T>::make(
      a.shape(), std::move(out), {a, b}, "sub", [a, b](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> ta = a, tb = b;
        if (ta.requires_grad()) {
          auto ga = ta.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tb.requires_grad()) {
          auto gb = tb.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor<T>::make(
      a.shape(), std::move(out), {a, b}, "mul", [a, b](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> ta = a, tb = b;
        const auto av = ta.data(), bv = tb.data();
        if (ta.requires_grad()) {
          auto ga = ta.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (tb.requires_grad()) {
          auto gb = tb.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "div");
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return Tensor<T>::make(
      a.shape(), std::move(out), {a, b}, "div", [a, b](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> ta = a, tb = b;
        const auto av = ta.data(), bv = tb.data();
        if (ta.requires_grad()) {
          auto ga = ta.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
        }
        if (tb.requires_grad()) {
          auto gb = tb.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i)
            gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
        }
      });
}

// ---------------------------------------------------------------------------
// Broadcast ops
// ---------------------------------------------------------------------------

// (m,n) + (n): adds v to every row. Used for dense-layer biases and the
// shift half of the flow's global affine.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  detail::check_matrix(x, "add_rowvec");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (v.size() != n)
    throw ShapeError("add_rowvec: vector length " + std::to_string(v.size()) +
                     " != columns " + std::to_string(n));
  const auto xv = x.data(), vv = v.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + vv[j];
  return Tensor<T>::make(
      x.shape(), std::move(out), {x, v}, "add_rowvec",
      [x, v, m, n](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> tx = x, tv = v;
        if (tx.requires_grad()) {
          auto gx = tx.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tv.requires_grad()) {
          auto gv = tv.grad_accum();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
        }
      });
}

// (m,n) * (n): scales every row elementwise by v.
template <typename T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  detail::check_matrix(x, "mul_rowvec");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (v.size() != n)
    throw ShapeError("mul_rowvec: vector length " + std::to_string(v.size()) +
                     " != columns " + std::to_string(n));
  const auto xv = x.data(), vv = v.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * vv[j];
  return Tensor<T>::make(
      x.shape(), std::move(out), {x, v}, "mul_rowvec",
      [x, v, m, n](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> tx = x, tv = v;
        const auto xv = tx.data(), vv = tv.data();
        if (tx.requires_grad()) {
          auto gx = tx.grad_accum();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gx[i * n + j] += g[i * n + j] * vv[j];
        }
        if (tv.requires_grad()) {
          auto gv = tv.grad_accum();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gv[j] += g[i * n + j] * xv[i * n + j];
        }
      });
}

// x + s where s is a single-element tensor broadcast over all of x.
template <typename T>
Tensor<T> add_bcast_scalar(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1)
    throw ShapeError("add_bcast_scalar: s must have one element");
  const auto xv = x.data();
  const T sv = s.data()[0];
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + sv;
  return Tensor<T>::make(
      x.shape(), std::move(out), {x, s}, "add_bcast_scalar",
      [x, s](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> tx = x, ts = s;
        if (tx.requires_grad()) {
          auto gx = tx.grad_accum();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (ts.requires_grad()) {
          auto gs = ts.grad_accum();
          T acc = T(0);
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i];
          gs[0] += acc;
        }
      });
}

// Compile-time constants (no gradient).
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, double c) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  const T cc = static_cast<T>(c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * cc;
  return Tensor<T>::make(x.shape(), std::move(out), {x}, "mul_scalar",
                         [x, cc](Tensor<T>& self) {
                           auto g = self.grad();
                           Tensor<T> tx = x;
                           auto gx = tx.grad_accum();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[i] += g[i] * cc;
                         });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double c) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  const T cc = static_cast<T>(c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + cc;
  return Tensor<T>::make(x.shape(), std::move(out), {x}, "add_scalar",
                         [x](Tensor<T>& self) {
                           auto g = self.grad();
                           Tensor<T> tx = x;
                           auto gx = tx.grad_accum();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[i] += g[i];
                         });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, -1.0);
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

// Shared scaffold: fwd(x) -> y, dydx(x, y) -> local derivative.
template <typename T, typename Fwd, typename Dydx>
Tensor<T> unary_map(const Tensor<T>& x, const char* name, Fwd fwd, Dydx dydx) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor<T>::make(
      x.shape(), std::move(out), {x}, name, [x, dydx](Tensor<T>& self) {
        auto g = self.grad();
        auto yv = self.data();
        Tensor<T> tx = x;
        const auto xv = tx.data();
        auto gx = tx.grad_accum();
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += g[i] * dydx(xv[i], yv[i]);
      });
}

}  // namespace detail

template <typename T>
Tensor<T> exp_op(const Tensor<T>& x) {
  return detail::unary_map(
      x, "exp", [](T v) { return std::exp(v); },
      [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
  return detail::unary_map(
      x, "log", [](T v) { return std::log(v); },
      [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  return detail::unary_map(
      x, "tanh", [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_map(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope = 0.01) {
  const T s = static_cast<T>(slope);
  return detail::unary_map(
      x, "leaky_relu", [s](T v) { return v > T(0) ? v : s * v; },
      [s](T v, T) { return v > T(0) ? T(1) : s; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_map(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary_map(
      x, "softplus",
      [](T v) {
        return v > T(0) ? v + std::log1p(std::exp(-v))
                        : std::log1p(std::exp(v));
      },
      [](T v, T) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary_map(
      x, "square", [](T v) { return v * v; },
      [](T v, T) { return T(2) * v; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto xv = x.data();
  T acc = T(0);
  for (const T& v : xv) acc += v;
  return Tensor<T>::make({1}, {acc}, {x}, "sum", [x](Tensor<T>& self) {
    const T g = self.grad()[0];
    Tensor<T> tx = x;
    auto gx = tx.grad_accum();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  const auto xv = x.data();
  T acc = T(0);
  for (const T& v : xv) acc += v;
  const T inv_n = T(1) / static_cast<T>(xv.size());
  return Tensor<T>::make({1}, {acc * inv_n}, {x}, "mean",
                         [x, inv_n](Tensor<T>& self) {
                           const T g = self.grad()[0] * inv_n;
                           Tensor<T> tx = x;
                           auto gx = tx.grad_accum();
                           for (std::size_t i = 0; i < gx.size(); ++i)
                             gx[i] += g;
                         });
}

// (m,n) -> (m): per-row sum.
template <typename T>
Tensor<T> row_sum(const Tensor<T>& x) {
  detail::check_matrix(x, "row_sum");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xv = x.data();
  std::vector<T> out(m, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) acc += xv[i * n + j];
    out[i] = acc;
  }
  return Tensor<T>::make({m}, std::move(out), {x}, "row_sum",
                         [x, m, n](Tensor<T>& self) {
                           auto g = self.grad();
                           Tensor<T> tx = x;
                           auto gx = tx.grad_accum();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               gx[i * n + j] += g[i];
                         });
}

// (m,n) -> (m): numerically stable log(sum_j exp(x_ij)).
template <typename T>
Tensor<T> logsumexp_rows(const Tensor<T>& x) {
  detail::check_matrix(x, "logsumexp_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xv = x.data();
  std::vector<T> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    T mx = xv[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[i * n + j]);
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) acc += std::exp(xv[i * n + j] - mx);
    out[i] = mx + std::log(acc);
  }
  return Tensor<T>::make(
      {m}, std::move(out), {x}, "logsumexp_rows",
      [x, m, n](Tensor<T>& self) {
        auto g = self.grad();
        auto yv = self.data();
        Tensor<T> tx = x;
        const auto xv = tx.data();
        auto gx = tx.grad_accum();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            gx[i * n + j] += g[i] * std::exp(xv[i * n + j] - yv[i]);
      });
}

// (m,n) with per-row column index -> (m): out_i = x[i, idx[i]].
template <typename T>
Tensor<T> select_columns(const Tensor<T>& x, const std::vector<int>& idx) {
  detail::check_matrix(x, "select_columns");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (idx.size() != m)
    throw ShapeError("select_columns: index count " +
                     std::to_string(idx.size()) + " != rows " +
                     std::to_string(m));
  const auto xv = x.data();
  std::vector<T> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const int j = idx[i];
    if (j < 0 || static_cast<std::size_t>(j) >= n)
      throw ValueError("select_columns: index " + std::to_string(j) +
                       " out of range [0," + std::to_string(n) + ")");
    out[i] = xv[i * n + static_cast<std::size_t>(j)];
  }
  return Tensor<T>::make({m}, std::move(out), {x}, "select_columns",
                         [x, idx, n](Tensor<T>& self) {
                           auto g = self.grad();
                           Tensor<T> tx = x;
                           auto gx = tx.grad_accum();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[i * n + static_cast<std::size_t>(idx[i])] +=
                                 g[i];
                         });
}

// ---------------------------------------------------------------------------
// Pairwise squared distances (fused for MMD and GMM heads)
// ---------------------------------------------------------------------------

// (m,d) x (n,d) -> (m,n) with D_ij = ||a_i - b_j||^2. The same tensor may be
// passed on both sides; both gradient contributions accumulate.
template <typename T>
Tensor<T> pairwise_sq_dists(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_matrix(a, "pairwise_sq_dists");
  detail::check_matrix(b, "pairwise_sq_dists");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("pairwise_sq_dists: feature dims differ: " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t k = 0; k < d; ++k) {
        const T diff = av[i * d + k] - bv[j * d + k];
        acc += diff * diff;
      }
      out[i * n + j] = acc;
    }
  }
  return Tensor<T>::make(
      {m, n}, std::move(out), {a, b}, "pairwise_sq_dists",
      [a, b, m, n, d](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> ta = a, tb = b;
        const auto av = ta.data(), bv = tb.data();
        if (ta.requires_grad()) {
          auto ga = ta.grad_accum();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const T gij2 = T(2) * g[i * n + j];
              for (std::size_t k = 0; k < d; ++k)
                ga[i * d + k] += gij2 * (av[i * d + k] - bv[j * d + k]);
            }
        }
        if (tb.requires_grad()) {
          auto gb = tb.grad_accum();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const T gij2 = T(2) * g[i * n + j];
              for (std::size_t k = 0; k < d; ++k)
                gb[j * d + k] += gij2 * (bv[j * d + k] - av[i * d + k]);
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_matrix(a, "matmul");
  detail::check_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dims differ: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  {
    detail::ConstMatMap<T> A(a.data().data(), m, k), B(b.data().data(), k, n);
    detail::MatMap<T> C(out.data(), m, n);
    C.noalias() = A * B;
  }
  return Tensor<T>::make(
      {m, n}, std::move(out), {a, b}, "matmul",
      [a, b, m, k, n](Tensor<T>& self) {
        Tensor<T> ta = a, tb = b;
        detail::ConstMatMap<T> G(self.grad().data(), m, n);
        if (ta.requires_grad()) {
          detail::ConstMatMap<T> B(tb.data().data(), k, n);
          detail::MatMap<T> GA(ta.grad_accum().data(), m, k);
          GA.noalias() += G * B.transpose();
        }
        if (tb.requires_grad()) {
          detail::ConstMatMap<T> A(ta.data().data(), m, k);
          detail::MatMap<T> GB(tb.grad_accum().data(), k, n);
          GB.noalias() += A.transpose() * G;
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  const auto xv = x.data();
  return Tensor<T>::make(shape, std::vector<T>(xv.begin(), xv.end()), {x},
                         "reshape", [x](Tensor<T>& self) {
                           auto g = self.grad();
                           Tensor<T> tx = x;
                           auto gx = tx.grad_accum();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[i] += g[i];
                         });
}

// (m,p) ++ (m,q) -> (m,p+q) along columns.
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_matrix(a, "concat");
  detail::check_matrix(b, "concat");
  if (a.dim(0) != b.dim(0))
    throw ShapeError("concat: row counts differ: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  const auto av = a.data(), bv = b.data();
  std::vector<T> out(m * (p + q));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(bv.data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return Tensor<T>::make(
      {m, p + q}, std::move(out), {a, b}, "concat",
      [a, b, m, p, q](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> ta = a, tb = b;
        if (ta.requires_grad()) {
          auto ga = ta.grad_accum();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p; ++j)
              ga[i * p + j] += g[i * (p + q) + j];
        }
        if (tb.requires_grad()) {
          auto gb = tb.grad_accum();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < q; ++j)
              gb[i * q + j] += g[i * (p + q) + p + j];
        }
      });
}

// Columns [c0, c1) of a matrix; the building block for split.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  detail::check_matrix(x, "split");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (c0 >= c1 || c1 > n)
    throw ShapeError("split: bad column range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") for " + shape_str(x.shape()));
  const std::size_t w = c1 - c0;
  const auto xv = x.data();
  std::vector<T> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(xv.data() + i * n + c0, w, out.data() + i * w);
  return Tensor<T>::make({m, w}, std::move(out), {x}, "split",
                         [x, m, n, c0, w](Tensor<T>& self) {
                           auto g = self.grad();
                           Tensor<T> tx = x;
                           auto gx = tx.grad_accum();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < w; ++j)
                               gx[i * n + c0 + j] += g[i * w + j];
                         });
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_cols(const Tensor<T>& x,
                                           std::size_t at) {
  return {slice_cols(x, 0, at), slice_cols(x, at, x.dim(1))};
}

// Rows [r0, r1) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
  detail::check_matrix(x, "slice");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (r0 >= r1 || r1 > m)
    throw ShapeError("slice: bad row range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") for " + shape_str(x.shape()));
  const std::size_t h = r1 - r0;
  const auto xv = x.data();
  std::vector<T> out(xv.begin() + r0 * n, xv.begin() + r1 * n);
  return Tensor<T>::make({h, n}, std::move(out), {x}, "slice",
                         [x, r0, n](Tensor<T>& self) {
                           auto g = self.grad();
                           Tensor<T> tx = x;
                           auto gx = tx.grad_accum();
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[r0 * n + i] += g[i];
                         });
}

// Applies a fixed column permutation: out[i][j] = x[i][perm[j]].
template <typename T>
Tensor<T> permute_cols(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  detail::check_matrix(x, "permute_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (perm.size() != n)
    throw ShapeError("permute_cols: permutation size " +
                     std::to_string(perm.size()) + " != columns " +
                     std::to_string(n));
  const auto xv = x.data();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = xv[i * n + perm[j]];
  return Tensor<T>::make({m, n}, std::move(out), {x}, "permute_cols",
                         [x, perm, m, n](Tensor<T>& self) {
                           auto g = self.grad();
                           Tensor<T> tx = x;
                           auto gx = tx.grad_accum();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               gx[i * n + perm[j]] += g[i * n + j];
                         });
}

}  // namespace flowcf
