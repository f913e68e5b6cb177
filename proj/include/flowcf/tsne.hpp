#pragma once

// Exact (O(n^2)) t-SNE: per-point bandwidths found by binary search on the
// perplexity, symmetrized affinities, Student-t low-dimensional kernel,
// gradient descent with momentum, adaptive gains, and early exaggeration.
// Deterministic under a fixed seed.

#include <cstdint>
#include <vector>

#include "flowcf/error.hpp"

namespace flowcf {

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  std::size_t exaggeration_iters = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  double momentum_early = 0.5;
  double momentum_late = 0.8;
  std::uint64_t seed = 0;
};

struct TsneResult {
  std::vector<double> coords;      // n x 2, row-major
  std::vector<double> kl_history;  // KL(P||Q) per iteration (true P)
  std::vector<double> affinities;  // symmetrized P, n x n
};

TsneResult tsne(const std::vector<double>& points, std::size_t n,
                std::size_t d, const TsneConfig& config);

}  // namespace flowcf
