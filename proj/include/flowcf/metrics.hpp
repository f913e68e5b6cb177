#pragma once

// Image similarity metrics and the silhouette score used for latent-space
// structure checks.

#include <cmath>
#include <span>
#include <vector>

#include "flowcf/error.hpp"

namespace flowcf {

// Mean squared error over all values (pixels x channels).
template <typename T>
double mse_metric(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size())
    throw ShapeError("mse: size mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  if (a.empty()) throw ShapeError("mse: empty input");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return acc / double(a.size());
}

// SSIM with the canonical parameters: 11x11 Gaussian window (sigma 1.5),
// K1=0.01, K2=0.03, dynamic range L=1 for [0,1] images. Windows are taken
// over valid positions only; channels are averaged. Inputs are planar CHW.
template <typename T>
double ssim_metric(std::span<const T> a, std::span<const T> b,
                   std::size_t channels, std::size_t height,
                   std::size_t width) {
  constexpr std::size_t kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;

  if (a.size() != b.size() || a.size() != channels * height * width)
    throw ShapeError("ssim: size mismatch");
  if (height < kWin || width < kWin)
    throw ShapeError("ssim: image smaller than the 11x11 window");

  // normalized separable Gaussian taps
  double taps[kWin];
  double norm = 0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = double(i) - 5.0;
    taps[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    norm += taps[i];
  }
  for (auto& t : taps) t /= norm;

  double total = 0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* pa = a.data() + c * height * width;
    const T* pb = b.data() + c * height * width;
    for (std::size_t y = 0; y + kWin <= height; ++y) {
      for (std::size_t x = 0; x + kWin <= width; ++x) {
        double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (std::size_t wy = 0; wy < kWin; ++wy) {
          for (std::size_t wx = 0; wx < kWin; ++wx) {
            const double w = taps[wy] * taps[wx];
            const double va = pa[(y + wy) * width + (x + wx)];
            const double vb = pb[(y + wy) * width + (x + wx)];
            mu_a += w * va;
            mu_b += w * vb;
            aa += w * (va * va);
            bb += w * (vb * vb);
            ab += w * (va * vb);  // grouping keeps ssim(a,b) == ssim(b,a)
          }
        }
        const double sq_a = mu_a * mu_a;
        const double sq_b = mu_b * mu_b;
        const double var_a = aa - sq_a;
        const double var_b = bb - sq_b;
        const double cov = ab - mu_a * mu_b;
        // canonical operand order: immune to FMA contraction, so the metric
        // stays exactly symmetric in (a, b)
        const double mu_sq = std::min(sq_a, sq_b) + std::max(sq_a, sq_b);
        const double var_sum =
            std::min(var_a, var_b) + std::max(var_a, var_b);
        const double val = ((2 * (mu_a * mu_b) + kC1) * (2 * cov + kC2)) /
                           ((mu_sq + kC1) * (var_sum + kC2));
        total += val;
        ++count;
      }
    }
  }
  return total / double(count);
}

// Mean silhouette coefficient with Euclidean distances. Points in singleton
// clusters score 0 by convention.
inline double silhouette_score(const std::vector<double>& points,
                               std::size_t n, std::size_t d,
                               const std::vector<int>& labels) {
  if (labels.size() != n) throw ShapeError("silhouette: label count mismatch");
  if (points.size() != n * d) throw ShapeError("silhouette: point size mismatch");
  int k = 0;
  for (int y : labels) k = std::max(k, y + 1);
  if (k < 2) throw ValueError("silhouette: need at least 2 clusters");

  std::vector<std::size_t> counts(k, 0);
  for (int y : labels) counts[y]++;

  auto dist = [&](std::size_t i, std::size_t j) {
    double acc = 0;
    for (std::size_t t = 0; t < d; ++t) {
      const double diff = points[i * d + t] - points[j * d + t];
      acc += diff * diff;
    }
    return std::sqrt(acc);
  };

  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[labels[i]] < 2) continue;  // contributes 0
    std::vector<double> mean_d(k, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      mean_d[labels[j]] += dist(i, j);
    }
    double a = 0, b = 0;
    bool b_set = false;
    for (int y = 0; y < k; ++y) {
      if (counts[y] == 0) continue;
      if (y == labels[i]) {
        a = mean_d[y] / double(counts[y] - 1);
      } else {
        const double v = mean_d[y] / double(counts[y]);
        if (!b_set || v < b) {
          b = v;
          b_set = true;
        }
      }
    }
    if (b_set) total += (b - a) / std::max(a, b);
  }
  return total / double(n);
}

}  // namespace flowcf
