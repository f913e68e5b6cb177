#pragma once

// Central-difference verification of reverse-mode gradients. The forward
// function is re-evaluated at perturbed points, so it must be pure in its
// inputs (all our ops are).

#include <cmath>
#include <functional>
#include <vector>

#include "flowcf/tensor.hpp"

namespace flowcf {

// Max over all coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
// The unit floor keeps near-zero gradients from blowing up the ratio while
// still behaving like a relative error at normal scales.
template <typename T, typename Fn>
double finite_diff_check(Fn&& fn, std::vector<Tensor<T>> inputs, T step) {
  if (!(step > T(0))) throw ValueError("finite_diff_check: step must be > 0");

  for (auto& in : inputs) {
    if (!in.is_leaf())
      throw Error("finite_diff_check: inputs must be leaf tensors");
    in.set_requires_grad(true);
    in.zero_grad();
  }

  Tensor<T> out = fn(inputs);
  if (out.size() != 1)
    throw ShapeError("finite_diff_check: function must return a scalar");
  out.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    if (in.has_grad()) {
      auto g = in.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(in.size(), T(0));
    }
  }

  double max_err = 0.0;
  {
    autograd::NoGradGuard no_grad;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      auto vals = inputs[t].mutable_data();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const T orig = vals[i];
        vals[i] = orig + step;
        const double f_plus = static_cast<double>(fn(inputs).value());
        vals[i] = orig - step;
        const double f_minus = static_cast<double>(fn(inputs).value());
        vals[i] = orig;
        const double fd = (f_plus - f_minus) / (2.0 * static_cast<double>(step));
        const double ad = static_cast<double>(analytic[t][i]);
        const double denom = std::max({1.0, std::abs(ad), std::abs(fd)});
        max_err = std::max(max_err, std::abs(ad - fd) / denom);
      }
    }
  }
  for (auto& in : inputs) in.zero_grad();
  return max_err;
}

}  // namespace flowcf
