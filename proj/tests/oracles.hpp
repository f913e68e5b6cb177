#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (scalar loops, direct formula transcription) so they
// cannot share bugs with the optimized library paths they check.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace oracles {

inline double rbf(std::span<const double> a, std::span<const double> b,
                  double sigma) {
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

// Direct three-term transcription: within-set sums skip i == j and divide by
// m(m-1); the cross sum runs over all pairs and divides by m^2.
inline double naive_mmd(const std::vector<std::vector<double>>& z,
                        const std::vector<std::vector<double>>& n,
                        double sigma) {
  const std::size_t m = z.size();
  double t_zz = 0, t_zn = 0, t_nn = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) {
        t_zz += rbf(z[i], z[j], sigma);
        t_nn += rbf(n[i], n[j], sigma);
      }
      t_zn += rbf(z[i], n[j], sigma);
    }
  const double mm1 = double(m) * double(m - 1);
  return t_zz / mm1 - 2.0 * t_zn / (double(m) * double(m)) + t_nn / mm1;
}

// Central-difference Jacobian of an R^d -> R^d map, then log|det| by LU.
inline double numerical_logdet(
    const std::function<std::vector<double>(const std::vector<double>&)>& f,
    const std::vector<double>& x, double h = 1e-5) {
  const std::size_t d = x.size();
  Eigen::MatrixXd jac(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const auto fp = f(xp), fm = f(xm);
    for (std::size_t i = 0; i < d; ++i)
      jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (fp[i] - fm[i]) / (2.0 * h);
  }
  return std::log(std::abs(jac.partialPivLu().determinant()));
}

inline double naive_mse(std::span<const double> a, std::span<const double> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / double(a.size());
}

// Scans a target alpha by bisection on the signed distance difference
// ||p - mu_src||^2 - ||p - mu_tgt||^2 along p = h + alpha * (mu_tgt - mu_src).
inline double bisect_boundary_alpha(std::span<const double> h,
                                    std::span<const double> mu_src,
                                    std::span<const double> mu_tgt) {
  const std::size_t d = h.size();
  auto gap = [&](double alpha) {
    double ds = 0, dt = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const double p = h[i] + alpha * (mu_tgt[i] - mu_src[i]);
      ds += (p - mu_src[i]) * (p - mu_src[i]);
      dt += (p - mu_tgt[i]) * (p - mu_tgt[i]);
    }
    return ds - dt;  // negative on the source side, positive on the target side
  };
  double lo = -1e6, hi = 1e6;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace oracles
