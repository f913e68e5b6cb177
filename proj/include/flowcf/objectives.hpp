#pragma once

// Training objectives: reconstruction (pixel or fixed random-feature),
// the unbiased MMD estimator against standard-normal targets, and the
// information-bottleneck objective over the GMM head in hidden space.

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowcf/nn.hpp"
#include "flowcf/ops.hpp"
#include "flowcf/ops_conv.hpp"
#include "flowcf/rng.hpp"
#include "flowcf/tensor.hpp"

namespace flowcf {

// ---------------------------------------------------------------------------
// GMM head: trainable per-class means, identity covariance, uniform priors.
// ---------------------------------------------------------------------------

template <typename T>
class GmmHead {
 public:
  GmmHead() = default;
  GmmHead(std::size_t num_classes, std::size_t dim, Rng& rng,
          double init_scale = 5.0)
      : k_(num_classes), dim_(dim) {
    if (num_classes < 2) throw ValueError("GmmHead: need K >= 2 classes");
    means_ = Tensor<T>::randn({num_classes, dim}, rng,
                              static_cast<T>(init_scale), true);
  }

  std::size_t num_classes() const { return k_; }
  std::size_t dim() const { return dim_; }
  Tensor<T>& means() { return means_; }
  const Tensor<T>& means() const { return means_; }

  std::vector<T> mean_of(std::size_t y) const {
    if (y >= k_) throw ValueError("GmmHead: class index out of range");
    auto d = means_.data();
    return {d.begin() + y * dim_, d.begin() + (y + 1) * dim_};
  }

  void set_means(const std::vector<T>& flat) {
    if (flat.size() != k_ * dim_)
      throw ShapeError("GmmHead::set_means: wrong element count");
    auto d = means_.mutable_data();
    std::copy(flat.begin(), flat.end(), d.begin());
  }

  // (m,d) -> (m,K) responsibilities p(y|h) ~ exp(-||h - mu_y||^2 / 2);
  // uniform priors cancel in the softmax.
  Tensor<T> posterior_batch(const Tensor<T>& h) const {
    Tensor<T> scores = mul_scalar(pairwise_sq_dists(h, means_), -0.5);
    Tensor<T> lse = logsumexp_rows(scores);  // (m)
    const std::size_t m = h.dim(0);
    // p_ij = exp(scores_ij - lse_i)
    const auto sv = scores.data();
    const auto lv = lse.data();
    std::vector<T> probs(m * k_);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k_; ++j)
        probs[i * k_ + j] = std::exp(sv[i * k_ + j] - lv[i]);
    return Tensor<T>::from_vec({m, k_}, std::move(probs));
  }

  std::vector<T> posterior(std::span<const T> h) const {
    Tensor<T> p = posterior_batch(
        Tensor<T>::from_vec({1, dim_}, {h.begin(), h.end()}));
    auto v = p.data();
    return {v.begin(), v.end()};
  }

  // Nearest-mean rule: argmin_y ||h - mu_y||, ties broken by lowest class
  // index. The one classification path shared by training, eval, and the
  // counterfactual engine.
  int nearest_mean(std::span<const T> h) const {
    if (h.size() != dim_)
      throw ShapeError("classify: hidden dim " + std::to_string(h.size()) +
                       " != head dim " + std::to_string(dim_));
    const auto mv = means_.data();
    int best = 0;
    T best_d = sq_dist(h, mv.subspan(0, dim_));
    for (std::size_t y = 1; y < k_; ++y) {
      const T d = sq_dist(h, mv.subspan(y * dim_, dim_));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(y);
      }
    }
    return best;
  }

  std::vector<int> nearest_mean_batch(const Tensor<T>& h) const {
    if (h.ndim() != 2 || h.dim(1) != dim_)
      throw ShapeError("classify: expected (m," + std::to_string(dim_) +
                       "), got " + shape_str(h.shape()));
    const auto hv = h.data();
    std::vector<int> out(h.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = nearest_mean(hv.subspan(i * dim_, dim_));
    return out;
  }

  void collect(ParamList<T>& out) {
    out.push_back({"gmm.means", means_, true});
  }

 private:
  static T sq_dist(std::span<const T> a, std::span<const T> b) {
    T acc = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const T d = a[i] - b[i];
      acc += d * d;
    }
    return acc;
  }

  std::size_t k_ = 0, dim_ = 0;
  Tensor<T> means_;
};

// ---------------------------------------------------------------------------
// Loss configuration
// ---------------------------------------------------------------------------

enum class ReconMode { kPixel, kRandomFeature };

struct LossWeights {
  double beta = 3.0;  // IB trade-off
  double rbf_sigma = 0.0;  // 0 = sqrt(latent_dim / 2)
  bool mmd_multiscale = false;  // sum over sigma * {0.5, 1, 2}
  double weight_recon = 1.0;
  double weight_mmd = 1.0;
  double weight_ib = 1.0;
  ReconMode recon_mode = ReconMode::kPixel;

  void validate() const {
    if (weight_recon < 0 || weight_mmd < 0 || weight_ib < 0 || beta < 0)
      throw ValueError("LossWeights: weights must be >= 0");
    if (rbf_sigma < 0) throw ValueError("LossWeights: rbf_sigma must be >= 0");
  }

  double sigma_for(std::size_t latent_dim) const {
    return rbf_sigma > 0 ? rbf_sigma
                         : std::sqrt(static_cast<double>(latent_dim) / 2.0);
  }
};

// ---------------------------------------------------------------------------
// RBF kernel (scalar form)
// ---------------------------------------------------------------------------

template <typename T>
T rbf_kernel(std::span<const T> a, std::span<const T> b, T sigma) {
  if (a.size() != b.size())
    throw ShapeError("rbf_kernel: dimension mismatch");
  if (!(sigma > T(0))) throw ValueError("rbf_kernel: sigma must be > 0");
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  return std::exp(-acc / (T(2) * sigma * sigma));
}

// ---------------------------------------------------------------------------
// MMD
// ---------------------------------------------------------------------------

namespace detail {

// Sums every entry of a square kernel matrix in a transpose-invariant order:
// diagonal first, then (ij + ji) pairs. Keeps mmd(Z,N) bitwise equal to
// mmd(N,Z). Backward is the same uniform broadcast as a plain sum.
template <typename T>
Tensor<T> sum_sym(const Tensor<T>& k) {
  const std::size_t m = k.dim(0);
  const auto kv = k.data();
  T acc = T(0);
  for (std::size_t i = 0; i < m; ++i) acc += kv[i * m + i];
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      acc += kv[i * m + j] + kv[j * m + i];
  return Tensor<T>::make({1}, {acc}, {k}, "sum_sym", [k](Tensor<T>& self) {
    const T g = self.grad()[0];
    Tensor<T> tk = k;
    auto gk = tk.grad_accum();
    for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g;
  });
}

// Off-diagonal kernel-sum term of the within-set estimate. The diagonal of
// exp(-D/2s^2) is exactly 1 (D_ii = 0 with zero gradient), so subtracting m
// keeps gradients intact.
template <typename T>
Tensor<T> mmd_within(const Tensor<T>& x, double inv_two_sigma_sq) {
  const std::size_t m = x.dim(0);
  Tensor<T> kmat = exp_op(mul_scalar(pairwise_sq_dists(x, x),
                                     -inv_two_sigma_sq));
  Tensor<T> off_diag = add_scalar(sum(kmat), -static_cast<double>(m));
  return mul_scalar(off_diag, 1.0 / (double(m) * double(m - 1)));
}

template <typename T>
Tensor<T> mmd_single_scale(const Tensor<T>& z, const Tensor<T>& n,
                           double sigma) {
  const std::size_t m = z.dim(0);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  Tensor<T> term_zz = mmd_within(z, inv2s2);
  Tensor<T> term_nn = mmd_within(n, inv2s2);
  Tensor<T> cross = sum_sym(exp_op(mul_scalar(pairwise_sq_dists(z, n),
                                              -inv2s2)));
  Tensor<T> term_zn = mul_scalar(cross, 2.0 / (double(m) * double(m)));
  return sub(add(term_zz, term_nn), term_zn);
}

}  // namespace detail

// Unbiased three-term estimator: within-set terms exclude the diagonal and
// divide by m(m-1); the cross term includes it and divides by m^2.
template <typename T>
Tensor<T> mmd_loss(const Tensor<T>& z, const Tensor<T>& n, double sigma,
                   bool multiscale = false) {
  detail::check_same_shape(z, n, "mmd_loss");
  detail::check_matrix(z, "mmd_loss");
  if (z.dim(0) < 2)
    throw ValueError("mmd_loss: batch size must be >= 2 (m-1 division)");
  if (!(sigma > 0)) throw ValueError("mmd_loss: sigma must be > 0");
  if (!multiscale) return detail::mmd_single_scale(z, n, sigma);
  Tensor<T> acc = detail::mmd_single_scale(z, n, 0.5 * sigma);
  acc = add(acc, detail::mmd_single_scale(z, n, sigma));
  return add(acc, detail::mmd_single_scale(z, n, 2.0 * sigma));
}

// ---------------------------------------------------------------------------
// Information-bottleneck objective
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_labels(const std::vector<int>& y, std::size_t m, std::size_t k) {
  if (y.size() != m) throw ShapeError("ib_loss: label count != batch size");
  for (int v : y)
    if (v < 0 || static_cast<std::size_t>(v) >= k)
      throw ValueError("ib_loss: label " + std::to_string(v) +
                       " out of range [0," + std::to_string(k) + ")");
}

}  // namespace detail

// Generative term: mean_i [ -log sum_y (1/K) N(h_i; mu_y, I) - logdet_i ],
// which drives I(Z,H) down through the change-of-variables density; plus
// beta * mean_i CE(posterior(h_i), y_i), which drives I(H,Y) up.
template <typename T>
Tensor<T> ib_loss_batch(const Tensor<T>& h, const Tensor<T>& logdet,
                        const std::vector<int>& labels, const GmmHead<T>& head,
                        double beta) {
  detail::check_matrix(h, "ib_loss");
  const std::size_t m = h.dim(0), d = h.dim(1);
  if (d != head.dim()) throw ShapeError("ib_loss: hidden dim != head dim");
  if (logdet.size() != m)
    throw ShapeError("ib_loss: logdet count != batch size");
  detail::check_labels<T>(labels, m, head.num_classes());

  Tensor<T> dists = pairwise_sq_dists(h, head.means());      // (m,K)
  Tensor<T> scores = mul_scalar(dists, -0.5);                // log-likelihoods
  Tensor<T> lse = logsumexp_rows(scores);                    // (m)

  const double log_norm =
      0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) +
      std::log(static_cast<double>(head.num_classes()));
  Tensor<T> generative =
      add_scalar(sub(neg(mean(lse)), mean(logdet)), log_norm);

  // CE_i = -log softmax(scores)_{i,y_i} = 0.5 * D_{i,y_i} + lse_i
  Tensor<T> ce = mean(add(mul_scalar(select_columns(dists, labels), 0.5), lse));
  return add(generative, mul_scalar(ce, beta));
}

// Single-sample form used by the spec-level contract tests.
template <typename T>
T ib_loss(std::span<const T> h, T total_logdet, int y, const GmmHead<T>& head,
          double beta) {
  autograd::NoGradGuard no_grad;
  Tensor<T> hb = Tensor<T>::from_vec({1, h.size()}, {h.begin(), h.end()});
  Tensor<T> ld = Tensor<T>::from_vec({1}, {total_logdet});
  return ib_loss_batch(hb, ld, {y}, head, beta).value();
}

// ---------------------------------------------------------------------------
// Reconstruction loss
// ---------------------------------------------------------------------------

// Fixed, randomly initialized, frozen 3-stage conv feature extractor: the
// perceptual-loss stand-in. Weights never receive gradients.
template <typename T>
class RandomFeatureExtractor {
 public:
  RandomFeatureExtractor() = default;
  RandomFeatureExtractor(std::size_t in_channels, std::uint64_t seed) {
    Rng rng(seed);
    w1_ = Tensor<T>::randn({8, in_channels, 3, 3}, rng,
                           init_std(in_channels * 9));
    w2_ = Tensor<T>::randn({16, 8, 3, 3}, rng, init_std(8 * 9));
    w3_ = Tensor<T>::randn({32, 16, 3, 3}, rng, init_std(16 * 9));
  }

  // Three activation stages, each conv3x3 + ReLU with 2x pooling between.
  std::vector<Tensor<T>> features(const Tensor<T>& x) const {
    Tensor<T> f1 = relu(conv2d(x, w1_, 1));
    Tensor<T> f2 = relu(conv2d(maxpool2d(f1, 2), w2_, 1));
    Tensor<T> f3 = relu(conv2d(maxpool2d(f2, 2), w3_, 1));
    return {f1, f2, f3};
  }

 private:
  static T init_std(std::size_t fan_in) {
    return static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  }
  Tensor<T> w1_, w2_, w3_;
};

template <typename T>
Tensor<T> reconstruction_loss(
    const Tensor<T>& x_rec, const Tensor<T>& x, ReconMode mode,
    const RandomFeatureExtractor<T>* extractor = nullptr) {
  detail::check_same_shape(x_rec, x, "reconstruction_loss");
  if (mode == ReconMode::kPixel) return mean(square(sub(x_rec, x)));
  if (!extractor)
    throw ValueError("reconstruction_loss: random-feature mode needs an extractor");
  auto fr = extractor->features(x_rec);
  auto fx = extractor->features(x);
  Tensor<T> acc = mean(square(sub(fr[0], fx[0])));
  for (std::size_t i = 1; i < fr.size(); ++i)
    acc = add(acc, mean(square(sub(fr[i], fx[i]))));
  return mul_scalar(acc, 1.0 / double(fr.size()));
}

// ---------------------------------------------------------------------------
// Composite loss (reconstruction + MMD + IB), with per-term breakdown
// ---------------------------------------------------------------------------

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  Tensor<T> recon;
  Tensor<T> mmd;
  Tensor<T> ib;
};

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& x, const Tensor<T>& x_rec,
                            const Tensor<T>& z, const Tensor<T>& n,
                            const Tensor<T>& h, const Tensor<T>& logdet,
                            const std::vector<int>& labels,
                            const GmmHead<T>& head, const LossWeights& weights,
                            const RandomFeatureExtractor<T>* extractor =
                                nullptr) {
  weights.validate();
  LossBreakdown<T> out;
  out.recon = reconstruction_loss(x_rec, x, weights.recon_mode, extractor);
  out.mmd = mmd_loss(z, n, weights.sigma_for(z.dim(1)),
                     weights.mmd_multiscale);
  out.ib = ib_loss_batch(h, logdet, labels, head, weights.beta);
  out.total = add(add(mul_scalar(out.recon, weights.weight_recon),
                      mul_scalar(out.mmd, weights.weight_mmd)),
                  mul_scalar(out.ib, weights.weight_ib));
  return out;
}

}  // namespace flowcf
