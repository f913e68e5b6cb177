#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "flowcf/gradcheck.hpp"
#include "flowcf/ops.hpp"
#include "flowcf/ops_conv.hpp"
#include "flowcf/tensor.hpp"

using namespace flowcf;

namespace {

template <typename T>
Tensor<T> rand_in(const Shape& shape, Rng& rng, double lo = -2.0,
                  double hi = 2.0) {
  return Tensor<T>::uniform(shape, rng, static_cast<T>(lo),
                            static_cast<T>(hi));
}

// Uniform on (-hi,-gap) u (gap,hi): keeps kinked ops away from their kink so
// central differences stay valid.
template <typename T>
Tensor<T> rand_off_zero(const Shape& shape, Rng& rng, double gap,
                        double hi = 2.0) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) {
    const double mag = rng.uniform(gap, hi);
    x = static_cast<T>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return Tensor<T>::from_vec(shape, std::move(v));
}

// Equally spaced values, shuffled: random but with pairwise gaps far larger
// than any FD step, so argmax ops never tie-flip.
template <typename T>
Tensor<T> rand_separated(const Shape& shape, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = static_cast<T>(-2.0 + 4.0 * double(i) / double(n > 1 ? n - 1 : 1));
  rng.shuffle(v);
  return Tensor<T>::from_vec(shape, std::move(v));
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  auto t = Tensor<double>::from_vec({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_THROWS_AS(Tensor<double>::from_vec({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>().shape(), Error);

  auto g = Tensor<float>::zeros({4}, true);
  CHECK(g.requires_grad());
  CHECK(g.is_leaf());
}

TEST_CASE("forward examples are hand-evaluable") {
  // y = x*x at x=3
  auto x = Tensor<double>::scalar(3.0);
  auto y = mul(x, x);
  CHECK(y.value() == doctest::Approx(9.0));

  // conv2d with 1x1 identity kernel reproduces the input
  Rng rng(7);
  auto img = rand_in<double>({1, 1, 4, 4}, rng, 0.0, 1.0);
  auto w = Tensor<double>::from_vec({1, 1, 1, 1}, {1.0});
  auto out = conv2d<double>(img, w, 0);
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(img.data()[i]));

  // matmul by identity
  auto a = Tensor<double>::from_vec({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor<double>::from_vec({2, 2}, {1, 0, 0, 1});
  auto prod = matmul(a, eye);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(prod.data()[i] == doctest::Approx(a.data()[i]));
}

TEST_CASE("forward evaluation is pure and deterministic") {
  Rng rng(11);
  auto x = rand_in<float>({3, 5}, rng);
  auto w = rand_in<float>({5, 4}, rng);
  auto y1 = matmul(x, w);
  auto y2 = matmul(x, w);
  for (std::size_t i = 0; i < y1.size(); ++i)
    CHECK(y1.data()[i] == y2.data()[i]);  // bitwise
}

TEST_CASE("backward examples") {
  // d(x^2)/dx = 2x
  auto x = Tensor<double>::scalar(3.0, true);
  auto y = mul(x, x);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  // sigmoid'(0) = 0.25
  auto z = Tensor<double>::scalar(0.0, true);
  auto s = sigmoid(z);
  s.backward();
  CHECK(z.grad()[0] == doctest::Approx(0.25));

  // y = sum(x .* x), grad = 2x
  auto v = Tensor<double>::from_vec({3}, {1, 2, 3}, true);
  auto loss = sum(mul(v, v));
  loss.backward();
  CHECK(v.grad()[0] == doctest::Approx(2.0));
  CHECK(v.grad()[1] == doctest::Approx(4.0));
  CHECK(v.grad()[2] == doctest::Approx(6.0));
}

TEST_CASE("diamond graphs accumulate through shared nodes once") {
  // w = y + y with y = x*x  =>  w = 2x^2, dw/dx = 4x
  auto x = Tensor<double>::scalar(1.5, true);
  auto y = mul(x, x);
  auto w = add(y, y);
  w.backward();
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("error paths are structured") {
  auto x = Tensor<double>::from_vec({2}, {1, 2}, true);
  auto y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), ShapeError);  // non-scalar

  auto detached = Tensor<double>::scalar(1.0);  // no grad anywhere
  auto z = mul(detached, detached);
  CHECK_THROWS_AS(z.backward(), Error);

  auto a = Tensor<double>::from_vec({2}, {1, 2});
  auto b = Tensor<double>::from_vec({3}, {1, 2, 3});
  CHECK_THROWS_WITH_AS(add(a, b).value(),
                       doctest::Contains("add"), ShapeError);

  // Non-finite intermediates name the node when checks are on.
  autograd::set_finite_checks(true);
  auto neg_in = Tensor<double>::from_vec({1}, {-1.0});
  CHECK_THROWS_WITH_AS(log_op(neg_in).value(), doctest::Contains("log"),
                       ValueError);
  autograd::set_finite_checks(false);

  // Loss finiteness is always enforced at backward time.
  auto bad = Tensor<double>::scalar(-1.0, true);
  auto nan_loss = log_op(bad);
  CHECK_THROWS_AS(nan_loss.backward(), ValueError);
}

TEST_CASE("linear graph finite difference error is at rounding level") {
  Rng rng(3);
  auto fn = [](std::vector<Tensor<double>>& in) {
    return sum(mul_scalar(in[0], 3.0));
  };
  auto err = finite_diff_check<double>(fn, {rand_in<double>({6}, rng)}, 1e-5);
  CHECK(err < 1e-9);
}

namespace {

// Vector-Jacobian check for one primitive: backward() through a fixed random
// linear functional vs. central differences of the raw op outputs, with the
// difference quotient accumulated in double so f32 runs are not swamped by
// cancellation noise.
template <typename T, typename MakeInputs, typename Apply>
double vjp_worst_error(MakeInputs& make_inputs, Apply& apply, int trials,
                       T step, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    auto inputs = make_inputs.template operator()<T>(rng);
    for (auto& in : inputs) in.set_requires_grad(true);

    Tensor<T> y = apply.template operator()<T>(inputs);
    std::vector<double> proj(y.size());
    for (auto& p : proj) p = rng.uniform(0.1, 1.1);

    Tensor<T> pvec = Tensor<T>::from_vec(
        y.shape(), std::vector<T>(proj.begin(), proj.end()));
    sum(mul(y, pvec)).backward();

    std::vector<std::vector<T>> analytic;
    for (auto& in : inputs)
      analytic.emplace_back(in.has_grad()
                                ? std::vector<T>(in.grad().begin(),
                                                 in.grad().end())
                                : std::vector<T>(in.size(), T(0)));

    autograd::NoGradGuard no_grad;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto vals = inputs[k].mutable_data();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const T orig = vals[i];
        vals[i] = orig + step;
        Tensor<T> yp = apply.template operator()<T>(inputs);
        vals[i] = orig - step;
        Tensor<T> ym = apply.template operator()<T>(inputs);
        vals[i] = orig;
        double fd = 0;
        for (std::size_t e = 0; e < proj.size(); ++e)
          fd += proj[e] * (static_cast<double>(yp.data()[e]) -
                           static_cast<double>(ym.data()[e]));
        fd /= 2.0 * static_cast<double>(step);
        const double ad = static_cast<double>(analytic[k][i]);
        const double denom = std::max({1.0, std::abs(ad), std::abs(fd)});
        worst = std::max(worst, std::abs(ad - fd) / denom);
      }
    }
    for (auto& in : inputs) in.zero_grad();
  }
  return worst;
}

// 1e-6 at 64-bit, 1e-3 at 32-bit, over >= `trials` random points.
template <typename MakeInputs, typename Apply>
void check_primitive(const char* name, MakeInputs make_inputs, Apply apply,
                     int trials = 100, float step32 = 2e-3f) {
  CAPTURE(name);
  const double worst64 =
      vjp_worst_error<double>(make_inputs, apply, trials, 1e-5, 0xF00D);
  CHECK_MESSAGE(worst64 <= 1e-6, name << " f64 worst=" << worst64);
  const double worst32 =
      vjp_worst_error<float>(make_inputs, apply, trials, step32, 0xBEEF);
  CHECK_MESSAGE(worst32 <= 1e-3, name << " f32 worst=" << worst32);
}

}  // namespace

TEST_CASE("every primitive matches central differences") {
  SUBCASE("elementwise binary") {
    auto mk2 = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({3, 4}, rng), rand_in<T>({3, 4}, rng)};
    };
    check_primitive("add", mk2, []<typename T>(std::vector<Tensor<T>>& in) {
      return add(in[0], in[1]);
    });
    check_primitive("sub", mk2, []<typename T>(std::vector<Tensor<T>>& in) {
      return sub(in[0], in[1]);
    });
    check_primitive("mul", mk2, []<typename T>(std::vector<Tensor<T>>& in) {
      return mul(in[0], in[1]);
    });
    auto mk_div = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({3, 4}, rng),
                         rand_off_zero<T>({3, 4}, rng, 0.4)};
    };
    check_primitive("div", mk_div,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return div(in[0], in[1]);
                    });
  }

  SUBCASE("broadcast") {
    auto mk = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({4, 3}, rng), rand_in<T>({3}, rng)};
    };
    check_primitive("add_rowvec", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return add_rowvec(in[0], in[1]);
                    });
    check_primitive("mul_rowvec", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return mul_rowvec(in[0], in[1]);
                    });
    auto mk_s = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({5}, rng), rand_in<T>({1}, rng)};
    };
    check_primitive("add_bcast_scalar", mk_s,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return add_bcast_scalar(in[0], in[1]);
                    });
  }

  SUBCASE("unary smooth") {
    auto mk = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({2, 6}, rng)};
    };
    auto mk_pos = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({2, 6}, rng, 0.3, 2.5)};
    };
    check_primitive("exp", mk, []<typename T>(std::vector<Tensor<T>>& in) {
      return exp_op(in[0]);
    });
    check_primitive("log", mk_pos,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return log_op(in[0]);
                    });
    check_primitive("tanh", mk, []<typename T>(std::vector<Tensor<T>>& in) {
      return tanh_op(in[0]);
    });
    check_primitive("sigmoid", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return sigmoid(in[0]);
                    });
    check_primitive("softplus", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return softplus(in[0]);
                    });
    check_primitive("square", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return square(in[0]);
                    });
    check_primitive("mul_scalar", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return mul_scalar(in[0], -1.7);
                    });
    check_primitive("add_scalar", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return add_scalar(in[0], 0.9);
                    });
  }

  SUBCASE("unary kinked") {
    auto mk_off = []<typename T>(Rng& rng) {
      return std::vector{rand_off_zero<T>({2, 6}, rng, 0.05)};
    };
    check_primitive("relu", mk_off,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return relu(in[0]);
                    });
    check_primitive("leaky_relu", mk_off,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return leaky_relu(in[0], 0.1);
                    });
  }

  SUBCASE("reductions and row ops") {
    auto mk = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({3, 5}, rng)};
    };
    check_primitive("sum", mk, []<typename T>(std::vector<Tensor<T>>& in) {
      return sum(in[0]);
    });
    check_primitive("mean", mk, []<typename T>(std::vector<Tensor<T>>& in) {
      return mean(in[0]);
    });
    check_primitive("row_sum", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return row_sum(in[0]);
                    });
    check_primitive("logsumexp_rows", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return logsumexp_rows(in[0]);
                    });
    check_primitive("select_columns", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return select_columns(in[0], {4, 0, 2});
                    });
  }

  SUBCASE("pairwise and matmul") {
    auto mk_pair = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({3, 4}, rng, -1.0, 1.0),
                         rand_in<T>({5, 4}, rng, -1.0, 1.0)};
    };
    check_primitive("pairwise_sq_dists", mk_pair,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return pairwise_sq_dists(in[0], in[1]);
                    });
    auto mk_same = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({4, 3}, rng, -1.0, 1.0)};
    };
    check_primitive("pairwise_sq_dists_self", mk_same,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return pairwise_sq_dists(in[0], in[0]);
                    });
    auto mk_mm = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({3, 4}, rng, -1.0, 1.0),
                         rand_in<T>({4, 2}, rng, -1.0, 1.0)};
    };
    check_primitive("matmul", mk_mm,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return matmul(in[0], in[1]);
                    });
  }

  SUBCASE("shape ops") {
    auto mk = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({3, 4}, rng)};
    };
    check_primitive("reshape", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return reshape(in[0], {2, 6});
                    });
    auto mk2 = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({3, 2}, rng), rand_in<T>({3, 3}, rng)};
    };
    check_primitive("concat", mk2,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return concat_cols(in[0], in[1]);
                    });
    check_primitive("split", mk, []<typename T>(std::vector<Tensor<T>>& in) {
      return split_cols(in[0], 2).first;
    });
    check_primitive("slice", mk, []<typename T>(std::vector<Tensor<T>>& in) {
      return slice_rows(in[0], 1, 3);
    });
    check_primitive("permute_cols", mk,
                    []<typename T>(std::vector<Tensor<T>>& in) {
                      return permute_cols(in[0], {2, 0, 3, 1});
                    });
  }

  SUBCASE("conv and pooling") {
    auto mk_conv = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({2, 2, 4, 4}, rng, -1.0, 1.0),
                         rand_in<T>({3, 2, 3, 3}, rng, -1.0, 1.0),
                         rand_in<T>({3}, rng, -1.0, 1.0)};
    };
    check_primitive(
        "conv2d_pad1", mk_conv,
        []<typename T>(std::vector<Tensor<T>>& in) {
          return conv2d(in[0], in[1], in[2], 1);
        },
        40);
    auto mk_conv1 = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({2, 3, 3, 3}, rng, -1.0, 1.0),
                         rand_in<T>({2, 3, 1, 1}, rng, -1.0, 1.0)};
    };
    check_primitive(
        "conv2d_1x1", mk_conv1,
        []<typename T>(std::vector<Tensor<T>>& in) {
          return conv2d(in[0], in[1], std::size_t(0));
        },
        40);
    auto mk_pool = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({2, 2, 4, 4}, rng)};
    };
    auto mk_pool_sep = []<typename T>(Rng& rng) {
      return std::vector{rand_separated<T>({2, 2, 4, 4}, rng)};
    };
    check_primitive(
        "maxpool2d", mk_pool_sep,
        []<typename T>(std::vector<Tensor<T>>& in) {
          return maxpool2d(in[0], 2);
        },
        40);
    check_primitive(
        "upsample_nearest", mk_pool,
        []<typename T>(std::vector<Tensor<T>>& in) {
          return upsample2d(in[0], 2, UpsampleMode::kNearest);
        },
        40);
    check_primitive(
        "upsample_bilinear", mk_pool,
        []<typename T>(std::vector<Tensor<T>>& in) {
          return upsample2d(in[0], 2, UpsampleMode::kBilinear);
        },
        40);
  }

  SUBCASE("batchnorm") {
    auto mk = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({3, 2, 3, 3}, rng),
                         rand_in<T>({2}, rng, 0.5, 1.5),
                         rand_in<T>({2}, rng, -0.5, 0.5)};
    };
    check_primitive(
        "batchnorm2d", mk,
        []<typename T>(std::vector<Tensor<T>>& in) {
          return batchnorm2d_train(in[0], in[1], in[2], T(1e-5));
        },
        40, 5e-3f);
    auto mk_ca = []<typename T>(Rng& rng) {
      return std::vector{rand_in<T>({2, 2, 3, 3}, rng)};
    };
    check_primitive(
        "channel_affine", mk_ca,
        []<typename T>(std::vector<Tensor<T>>& in) {
          return channel_affine(in[0], std::vector<T>{T(1.3), T(0.7)},
                                std::vector<T>{T(0.1), T(-0.2)});
        },
        40);
  }
}

TEST_CASE("spatial output-shape formulas hold over random shapes") {
  Rng rng(42);
  for (int t = 0; t < 60; ++t) {
    const std::size_t n = 1 + rng.uniform_index(3);
    const std::size_t c = 1 + rng.uniform_index(4);
    const std::size_t h = 2 * (1 + rng.uniform_index(6));
    const std::size_t w = 2 * (1 + rng.uniform_index(6));
    auto x = rand_in<float>({n, c, h, w}, rng);

    // conv2d 3x3 pad 1 preserves spatial dims
    if (h >= 1 && w >= 1) {
      auto wt = rand_in<float>({2, c, 3, 3}, rng);
      auto y = conv2d<float>(x, wt, 1);
      CHECK(y.shape() == Shape{n, 2, h, w});
    }
    // maxpool halves
    auto p = maxpool2d(x, 2);
    CHECK(p.shape() == Shape{n, c, h / 2, w / 2});
    // upsample doubles
    auto u = upsample2d(x, 2, UpsampleMode::kBilinear);
    CHECK(u.shape() == Shape{n, c, 2 * h, 2 * w});
  }
  // odd spatial dims reject pooling
  auto odd = Tensor<float>::zeros({1, 1, 3, 4});
  CHECK_THROWS_AS(maxpool2d(odd, 2), ShapeError);
}

TEST_CASE("depends_on tracks graph reachability") {
  auto x = Tensor<double>::from_vec({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
  auto [a, b] = split_cols(x, 2);
  auto ya = sum(square(a));
  CHECK(depends_on(ya, a));
  CHECK(depends_on(ya, x));
  CHECK_FALSE(depends_on(ya, b));
}
