#include "flowcf/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "flowcf/rng.hpp"

namespace flowcf {

namespace {

constexpr double kPMin = 1e-12;

// Conditional distribution row for point i given a precision (1 / 2sigma^2),
// returns its entropy. probs[j] over j != i.
double row_entropy(const std::vector<double>& sq_dists, std::size_t i,
                   double beta, std::vector<double>& probs) {
  const std::size_t n = probs.size();
  double sum = 0;
  for (std::size_t j = 0; j < n; ++j) {
    probs[j] = j == i ? 0.0 : std::exp(-beta * sq_dists[i * n + j]);
    sum += probs[j];
  }
  if (sum <= 0) return -1;  // degenerate: all mass vanished
  double h = 0;
  for (std::size_t j = 0; j < n; ++j) {
    probs[j] /= sum;
    if (probs[j] > 1e-300) h -= probs[j] * std::log(probs[j]);
  }
  return h;
}

}  // namespace

TsneResult tsne(const std::vector<double>& points, std::size_t n,
                std::size_t d, const TsneConfig& config) {
  if (d < 1) throw ValueError("tsne: dimensionality must be >= 1");
  if (points.size() != n * d) throw ShapeError("tsne: point buffer size mismatch");
  if (double(n) < 3.0 * config.perplexity)
    throw ValueError("tsne: need n >= 3 * perplexity (n=" + std::to_string(n) +
                     ", perplexity=" + std::to_string(config.perplexity) + ")");

  // pairwise squared distances in the input space
  std::vector<double> sq(n * n, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = points[i * d + t] - points[j * d + t];
        acc += diff * diff;
      }
      sq[i * n + j] = acc;
    }
  }

  // binary search each point's bandwidth to match log(perplexity)
  const double target_h = std::log(config.perplexity);
  std::vector<double> p_cond(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = 0.0, beta_hi = 1e300;
    std::vector<double> probs(n);
    double h = 0;
    bool converged = false;
    for (int it = 0; it < 64; ++it) {
      h = row_entropy(sq, i, beta, probs);
      if (h < 0) break;  // all neighbors at zero weight
      if (std::abs(h - target_h) < 1e-5) {
        converged = true;
        break;
      }
      if (h > target_h) {
        beta_lo = beta;
        beta = beta_hi >= 1e300 ? beta * 2 : 0.5 * (beta + beta_hi);
      } else {
        beta_hi = beta;
        beta = beta_lo <= 0.0 ? beta / 2 : 0.5 * (beta + beta_lo);
      }
    }
    if (!converged && std::abs(h - target_h) > 1e-2)
      throw ValueError(
          "tsne: perplexity calibration failed at point " + std::to_string(i) +
          " (duplicate-heavy neighborhood?)");
    for (std::size_t j = 0; j < n; ++j) p_cond[i * n + j] = probs[j];
  }

  // symmetrize: p_ij = (p_j|i + p_i|j) / 2n, floored
  std::vector<double> p(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      p[i * n + j] =
          std::max((p_cond[i * n + j] + p_cond[j * n + i]) / (2.0 * double(n)),
                   i == j ? 0.0 : kPMin);

  // init embedding
  Rng rng(config.seed);
  std::vector<double> y(n * 2);
  for (auto& v : y) v = rng.normal() * 1e-2;

  std::vector<double> velocity(n * 2, 0.0), gains(n * 2, 1.0),
      grad(n * 2, 0.0), qnum(n * n, 0.0);
  TsneResult result;
  result.kl_history.reserve(config.iterations);

  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    const double exag =
        iter < config.exaggeration_iters ? config.exaggeration : 1.0;
    const double momentum = iter < config.exaggeration_iters
                                ? config.momentum_early
                                : config.momentum_late;

    // Student-t numerators and their total
    double qsum = 0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (std::size_t(i) == j) {
          qnum[i * n + j] = 0;
          continue;
        }
        const double dy0 = y[i * 2] - y[j * 2];
        const double dy1 = y[i * 2 + 1] - y[j * 2 + 1];
        qnum[i * n + j] = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
      }
    }
    for (std::size_t i = 0; i < n; ++i)  // fixed-order reduction
      for (std::size_t j = 0; j < n; ++j) qsum += qnum[i * n + j];

    // gradient: 4 * sum_j (exag*p_ij - q_ij) * qnum_ij * (y_i - y_j)
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) {
      double g0 = 0, g1 = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (std::size_t(i) == j) continue;
        const double q = std::max(qnum[i * n + j] / qsum, kPMin);
        const double mult = (exag * p[i * n + j] - q) * qnum[i * n + j];
        g0 += mult * (y[i * 2] - y[j * 2]);
        g1 += mult * (y[i * 2 + 1] - y[j * 2 + 1]);
      }
      grad[i * 2] = 4.0 * g0;
      grad[i * 2 + 1] = 4.0 * g1;
    }

    // adaptive gains + momentum update
    for (std::size_t t = 0; t < n * 2; ++t) {
      const bool same_sign = (grad[t] > 0) == (velocity[t] > 0);
      gains[t] = same_sign ? std::max(gains[t] * 0.8, 0.01) : gains[t] + 0.2;
      velocity[t] =
          momentum * velocity[t] - config.learning_rate * gains[t] * grad[t];
      y[t] += velocity[t];
    }
    // re-center
    double c0 = 0, c1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      c0 += y[i * 2];
      c1 += y[i * 2 + 1];
    }
    c0 /= double(n);
    c1 /= double(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i * 2] -= c0;
      y[i * 2 + 1] -= c1;
    }

    // true-P KL divergence for the history
    double kl = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(qnum[i * n + j] / qsum, kPMin);
        kl += p[i * n + j] * std::log(p[i * n + j] / q);
      }
    result.kl_history.push_back(kl);
  }

  result.coords = std::move(y);
  result.affinities = std::move(p);
  return result;
}

}  // namespace flowcf
