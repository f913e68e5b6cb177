#pragma once

// Spatial primitives on NCHW tensors: conv2d (im2col + GEMM), maxpool2d,
// upsample2d (nearest / bilinear), and batch normalization. The batch loop
// is OpenMP-parallel with one sample per iteration and disjoint writes;
// cross-sample reductions run in fixed sample order so results do not
// depend on the thread count.

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "flowcf/ops.hpp"
#include "flowcf/tensor.hpp"

namespace flowcf {

namespace detail {

template <typename T>
inline void check_nchw(const Tensor<T>& x, const char* op) {
  if (x.ndim() != 4)
    throw ShapeError(std::string(op) + ": expected NCHW tensor, got " +
                     shape_str(x.shape()));
}

// Patch matrix for one sample: (C*kh*kw, Ho*Wo), zero padding.
template <typename T>
void im2col(const T* x, std::size_t c_in, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t pad, std::size_t ho,
            std::size_t wo, T* col) {
  const std::size_t p = ho * wo;
  std::size_t row = 0;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t dy = 0; dy < kh; ++dy) {
      for (std::size_t dx = 0; dx < kw; ++dx, ++row) {
        T* dst = col + row * p;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            for (std::size_t ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = T(0);
            continue;
          }
          const T* src = x + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox + dx) - static_cast<std::ptrdiff_t>(pad);
            dst[oy * wo + ox] =
                (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                    ? T(0)
                    : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back into an image (adjoint of im2col).
template <typename T>
void col2im_add(const T* col, std::size_t c_in, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, std::size_t pad,
                std::size_t ho, std::size_t wo, T* x) {
  const std::size_t p = ho * wo;
  std::size_t row = 0;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t dy = 0; dy < kh; ++dy) {
      for (std::size_t dx = 0; dx < kw; ++dx, ++row) {
        const T* src = col + row * p;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = x + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox + dx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
              dst[static_cast<std::size_t>(ix)] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: x (N,C,H,W) * w (F,C,kh,kw) [+ bias (F)] -> (N,F,Ho,Wo), stride 1.
// Output shape: Ho = H + 2*pad - kh + 1, Wo likewise.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& x, const Tensor<T>& w,
                      const std::optional<Tensor<T>>& bias, std::size_t pad) {
  detail::check_nchw(x, "conv2d");
  if (w.ndim() != 4)
    throw ShapeError("conv2d: weight must be (F,C,kh,kw), got " +
                     shape_str(w.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c)
    throw ShapeError("conv2d: input channels " + std::to_string(c) +
                     " != weight channels " + std::to_string(w.dim(1)));
  if (h + 2 * pad < kh || wd + 2 * pad < kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  if (bias && bias->size() != f)
    throw ShapeError("conv2d: bias length != filter count");
  const std::size_t ho = h + 2 * pad - kh + 1, wo = wd + 2 * pad - kw + 1;
  const std::size_t k = c * kh * kw, p = ho * wo;

  std::vector<T> out(n * f * p);
  {
    const T* xd = x.data().data();
    detail::ConstMatMap<T> W(w.data().data(), f, k);
#ifdef _OPENMP
#pragma omp parallel
#endif
    {
      std::vector<T> col(k * p);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
      for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(n); ++s) {
        detail::im2col(xd + s * c * h * wd, c, h, wd, kh, kw, pad, ho, wo,
                       col.data());
        detail::ConstMatMap<T> Col(col.data(), k, p);
        detail::MatMap<T> Out(out.data() + s * f * p, f, p);
        Out.noalias() = W * Col;
      }
    }
    if (bias) {
      const auto bv = bias->data();
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < f; ++j) {
          T* dst = out.data() + (s * f + j) * p;
          for (std::size_t i = 0; i < p; ++i) dst[i] += bv[j];
        }
    }
  }

  std::vector<Tensor<T>> parents{x, w};
  if (bias) parents.push_back(*bias);
  return Tensor<T>::make(
      {n, f, ho, wo}, std::move(out), std::move(parents), "conv2d",
      [x, w, bias, n, c, h, wd, f, kh, kw, pad, ho, wo, k,
       p](Tensor<T>& self) {
        Tensor<T> tx = x, tw = w;
        auto g = self.grad();
        const T* xd = tx.data().data();

        if (tw.requires_grad()) {
          // Per-sample partial products reduced in fixed sample order.
          std::vector<T> partial(n * f * k);
#ifdef _OPENMP
#pragma omp parallel
#endif
          {
            std::vector<T> col(k * p);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
            for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(n);
                 ++s) {
              detail::im2col(xd + s * c * h * wd, c, h, wd, kh, kw, pad, ho,
                             wo, col.data());
              detail::ConstMatMap<T> Col(col.data(), k, p);
              detail::ConstMatMap<T> G(g.data() + s * f * p, f, p);
              detail::MatMap<T> Pw(partial.data() + s * f * k, f, k);
              Pw.noalias() = G * Col.transpose();
            }
          }
          auto gw = tw.grad_accum();
          for (std::size_t s = 0; s < n; ++s)
            for (std::size_t i = 0; i < f * k; ++i)
              gw[i] += partial[s * f * k + i];
        }

        if (tx.requires_grad()) {
          auto gx = tx.grad_accum();
          detail::ConstMatMap<T> W(tw.data().data(), f, k);
#ifdef _OPENMP
#pragma omp parallel
#endif
          {
            std::vector<T> dcol(k * p);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
            for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(n);
                 ++s) {
              detail::ConstMatMap<T> G(g.data() + s * f * p, f, p);
              detail::MatMap<T> Dcol(dcol.data(), k, p);
              Dcol.noalias() = W.transpose() * G;
              detail::col2im_add(dcol.data(), c, h, wd, kh, kw, pad, ho, wo,
                                 gx.data() + s * c * h * wd);
            }
          }
        }

        if (bias) {
          Tensor<T> tb = *bias;
          if (tb.requires_grad()) {
            auto gb = tb.grad_accum();
            for (std::size_t s = 0; s < n; ++s)
              for (std::size_t j = 0; j < f; ++j) {
                T acc = T(0);
                const T* src = g.data() + (s * f + j) * p;
                for (std::size_t i = 0; i < p; ++i) acc += src[i];
                gb[j] += acc;
              }
          }
        }
      });
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t pad) {
  return detail::conv2d_impl(x, w, std::optional<Tensor<T>>(bias), pad);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t pad) {
  return detail::conv2d_impl(x, w, std::optional<Tensor<T>>(), pad);
}

// ---------------------------------------------------------------------------
// maxpool2d: kernel k, stride k. Requires H and W divisible by k.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k = 2) {
  detail::check_nchw(x, "maxpool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k == 0 || h % k != 0 || w % k != 0)
    throw ShapeError("maxpool2d: spatial dims " + shape_str(x.shape()) +
                     " not divisible by window " + std::to_string(k));
  const std::size_t ho = h / k, wo = w / k;
  const auto xv = x.data();
  std::vector<T> out(n * c * ho * wo);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t plane = 0;
       plane < static_cast<std::ptrdiff_t>(n * c); ++plane) {
    const T* src = xv.data() + plane * h * w;
    T* dst = out.data() + plane * ho * wo;
    std::uint32_t* am = argmax->data() + plane * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * k) * w + ox * k;
        T bv = src[best];
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = (oy * k + dy) * w + ox * k + dx;
            if (src[idx] > bv) {
              bv = src[idx];
              best = idx;
            }
          }
        dst[oy * wo + ox] = bv;
        am[oy * wo + ox] = static_cast<std::uint32_t>(best);
      }
  }
  return Tensor<T>::make(
      {n, c, ho, wo}, std::move(out), {x}, "maxpool2d",
      [x, argmax, n, c, h, w, ho, wo](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> tx = x;
        auto gx = tx.grad_accum();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (std::ptrdiff_t plane = 0;
             plane < static_cast<std::ptrdiff_t>(n * c); ++plane) {
          const T* gsrc = g.data() + plane * ho * wo;
          const std::uint32_t* am = argmax->data() + plane * ho * wo;
          T* gdst = gx.data() + plane * h * w;
          for (std::size_t i = 0; i < ho * wo; ++i) gdst[am[i]] += gsrc[i];
        }
      });
}

// ---------------------------------------------------------------------------
// upsample2d: integer factor, nearest or bilinear (half-pixel centers).
// ---------------------------------------------------------------------------

enum class UpsampleMode { kNearest, kBilinear };

template <typename T>
Tensor<T> upsample2d(const Tensor<T>& x, std::size_t factor,
                     UpsampleMode mode) {
  detail::check_nchw(x, "upsample2d");
  if (factor == 0) throw ShapeError("upsample2d: factor must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h * factor, wo = w * factor;
  const auto xv = x.data();
  std::vector<T> out(n * c * ho * wo);

  // Precompute the 1-D gather indices/weights once; rows and columns share
  // them because scaling is isotropic.
  struct Tap {
    std::size_t lo, hi;
    T w_hi;
  };
  auto make_taps = [&](std::size_t in, std::size_t on) {
    std::vector<Tap> taps(on);
    for (std::size_t o = 0; o < on; ++o) {
      const double src =
          (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      double fl = std::floor(src);
      double frac = src - fl;
      std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(fl);
      std::ptrdiff_t hi = lo + 1;
      if (lo < 0) {
        lo = 0;
        hi = 0;
        frac = 0;
      }
      if (hi >= static_cast<std::ptrdiff_t>(in)) {
        hi = static_cast<std::ptrdiff_t>(in) - 1;
        if (lo > hi) lo = hi;
        if (lo == hi) frac = 0;
      }
      taps[o] = {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi),
                 static_cast<T>(frac)};
    }
    (void)in;
    return taps;
  };
  std::vector<Tap> ytaps, xtaps;
  if (mode == UpsampleMode::kBilinear) {
    ytaps = make_taps(h, ho);
    xtaps = make_taps(w, wo);
  }

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t plane = 0; plane < static_cast<std::ptrdiff_t>(n * c);
       ++plane) {
    const T* src = xv.data() + plane * h * w;
    T* dst = out.data() + plane * ho * wo;
    if (mode == UpsampleMode::kNearest) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const T* row = src + (oy / factor) * w;
        for (std::size_t ox = 0; ox < wo; ++ox)
          dst[oy * wo + ox] = row[ox / factor];
      }
    } else {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const Tap& ty = ytaps[oy];
        const T* r0 = src + ty.lo * w;
        const T* r1 = src + ty.hi * w;
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const Tap& tx = xtaps[ox];
          const T top = r0[tx.lo] * (T(1) - tx.w_hi) + r0[tx.hi] * tx.w_hi;
          const T bot = r1[tx.lo] * (T(1) - tx.w_hi) + r1[tx.hi] * tx.w_hi;
          dst[oy * wo + ox] = top * (T(1) - ty.w_hi) + bot * ty.w_hi;
        }
      }
    }
  }

  return Tensor<T>::make(
      {n, c, ho, wo}, std::move(out), {x}, "upsample2d",
      [x, n, c, h, w, ho, wo, factor, mode, ytaps, xtaps](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> tx = x;
        auto gx = tx.grad_accum();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (std::ptrdiff_t plane = 0;
             plane < static_cast<std::ptrdiff_t>(n * c); ++plane) {
          const T* gsrc = g.data() + plane * ho * wo;
          T* gdst = gx.data() + plane * h * w;
          if (mode == UpsampleMode::kNearest) {
            for (std::size_t oy = 0; oy < ho; ++oy) {
              T* row = gdst + (oy / factor) * w;
              for (std::size_t ox = 0; ox < wo; ++ox)
                row[ox / factor] += gsrc[oy * wo + ox];
            }
          } else {
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const Tap& ty = ytaps[oy];
              for (std::size_t ox = 0; ox < wo; ++ox) {
                const Tap& tx2 = xtaps[ox];
                const T gv = gsrc[oy * wo + ox];
                gdst[ty.lo * w + tx2.lo] +=
                    gv * (T(1) - ty.w_hi) * (T(1) - tx2.w_hi);
                gdst[ty.lo * w + tx2.hi] += gv * (T(1) - ty.w_hi) * tx2.w_hi;
                gdst[ty.hi * w + tx2.lo] += gv * ty.w_hi * (T(1) - tx2.w_hi);
                gdst[ty.hi * w + tx2.hi] += gv * ty.w_hi * tx2.w_hi;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization over (N,H,W) per channel.
// ---------------------------------------------------------------------------

// Training-mode BN: normalizes with biased batch statistics and reports them
// so the caller can maintain running averages. Gradients flow through the
// batch statistics (exact derivative).
template <typename T>
Tensor<T> batchnorm2d_train(const Tensor<T>& x, const Tensor<T>& gamma,
                            const Tensor<T>& beta, T eps,
                            std::vector<T>* batch_mean_out = nullptr,
                            std::vector<T>* batch_var_out = nullptr) {
  detail::check_nchw(x, "batchnorm2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.size() != c || beta.size() != c)
    throw ShapeError("batchnorm2d: gamma/beta length != channels");
  const std::size_t plane = h * w, m = n * plane;
  if (m < 2) throw ShapeError("batchnorm2d: needs at least 2 values/channel");
  const auto xv = x.data();
  const auto gv = gamma.data(), bv = beta.data();

  auto mean_v = std::make_shared<std::vector<T>>(c, T(0));
  auto inv_std_v = std::make_shared<std::vector<T>>(c, T(0));
  std::vector<T> var_v(c, T(0));
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t ch = 0; ch < static_cast<std::ptrdiff_t>(c); ++ch) {
    T acc = T(0);
    for (std::size_t s = 0; s < n; ++s) {
      const T* src = xv.data() + (s * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    }
    const T mu = acc / static_cast<T>(m);
    T vacc = T(0);
    for (std::size_t s = 0; s < n; ++s) {
      const T* src = xv.data() + (s * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = src[i] - mu;
        vacc += d * d;
      }
    }
    const T var = vacc / static_cast<T>(m);
    (*mean_v)[ch] = mu;
    var_v[ch] = var;
    (*inv_std_v)[ch] = T(1) / std::sqrt(var + eps);
  }
  if (batch_mean_out) *batch_mean_out = *mean_v;
  if (batch_var_out) *batch_var_out = var_v;

  std::vector<T> out(xv.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t sc = 0; sc < static_cast<std::ptrdiff_t>(n * c); ++sc) {
    const std::size_t ch = sc % c;
    const T mu = (*mean_v)[ch], is = (*inv_std_v)[ch];
    const T ga = gv[ch], be = bv[ch];
    const T* src = xv.data() + sc * plane;
    T* dst = out.data() + sc * plane;
    for (std::size_t i = 0; i < plane; ++i)
      dst[i] = ga * (src[i] - mu) * is + be;
  }

  return Tensor<T>::make(
      {n, c, h, w}, std::move(out), {x, gamma, beta}, "batchnorm2d",
      [x, gamma, beta, mean_v, inv_std_v, n, c, plane, m](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> tx = x, tg = gamma, tb = beta;
        const auto xv = tx.data();
        const auto gav = tg.data();

        // Per-channel sums of g and g*xhat, fixed order.
        std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T mu = (*mean_v)[ch], is = (*inv_std_v)[ch];
          T sg = T(0), sgx = T(0);
          for (std::size_t s = 0; s < n; ++s) {
            const T* gs = g.data() + (s * c + ch) * plane;
            const T* xs = xv.data() + (s * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sg += gs[i];
              sgx += gs[i] * (xs[i] - mu) * is;
            }
          }
          sum_g[ch] = sg;
          sum_gx[ch] = sgx;
        }

        if (tg.requires_grad()) {
          auto gg = tg.grad_accum();
          for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
        }
        if (tb.requires_grad()) {
          auto gb = tb.grad_accum();
          for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
        }
        if (tx.requires_grad()) {
          auto gx = tx.grad_accum();
          const T inv_m = T(1) / static_cast<T>(m);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
          for (std::ptrdiff_t sc = 0;
               sc < static_cast<std::ptrdiff_t>(n * c); ++sc) {
            const std::size_t ch = sc % c;
            const T mu = (*mean_v)[ch], is = (*inv_std_v)[ch];
            const T coeff = gav[ch] * is;
            const T mg = sum_g[ch] * inv_m, mgx = sum_gx[ch] * inv_m;
            const T* gs = g.data() + sc * plane;
            const T* xs = xv.data() + sc * plane;
            T* dst = gx.data() + sc * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const T xhat = (xs[i] - mu) * is;
              dst[i] += coeff * (gs[i] - mg - xhat * mgx);
            }
          }
        }
      });
}

// Inference-mode per-channel affine y = x*scale[c] + shift[c]; scale/shift
// are plain constants (running statistics folded in by the caller), so only
// the input receives gradient.
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, std::vector<T> scale,
                         std::vector<T> shift) {
  detail::check_nchw(x, "channel_affine");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (scale.size() != c || shift.size() != c)
    throw ShapeError("channel_affine: scale/shift length != channels");
  const auto xv = x.data();
  std::vector<T> out(xv.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t sc = 0; sc < static_cast<std::ptrdiff_t>(n * c); ++sc) {
    const std::size_t ch = sc % c;
    const T* src = xv.data() + sc * plane;
    T* dst = out.data() + sc * plane;
    for (std::size_t i = 0; i < plane; ++i)
      dst[i] = src[i] * scale[ch] + shift[ch];
  }
  return Tensor<T>::make(
      x.shape(), std::move(out), {x}, "channel_affine",
      [x, scale = std::move(scale), n, c, plane](Tensor<T>& self) {
        auto g = self.grad();
        Tensor<T> tx = x;
        auto gx = tx.grad_accum();
        for (std::size_t sc = 0; sc < n * c; ++sc) {
          const T s = scale[sc % c];
          const T* gs = g.data() + sc * plane;
          T* dst = gx.data() + sc * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] += gs[i] * s;
        }
      });
}

}  // namespace flowcf
