#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "flowcf/flow.hpp"
#include "flowcf/gradcheck.hpp"
#include "oracles.hpp"

using namespace flowcf;

namespace {

FlowConfig test_config(std::size_t dim, std::size_t blocks,
                       double gain = 0.5) {
  FlowConfig cfg;
  cfg.dim = dim;
  cfg.blocks = blocks;
  cfg.hidden = 16;
  cfg.last_layer_gain = gain;  // non-trivial couplings for tests
  return cfg;
}

template <typename T>
std::vector<T> random_vec(std::size_t d, Rng& rng, double lo = -2,
                          double hi = 2) {
  std::vector<T> v(d);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

// Sets a block to the identity coupling: zero subnet outputs, identity
// permutation, identity global affine.
template <typename T>
void make_identity(CouplingBlock<T>& blk) {
  auto zero = [](Tensor<T>& t) {
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), T(0));
  };
  zero(blk.net_s_.l3_.w);
  zero(blk.net_s_.l3_.b);
  zero(blk.net_t_.l3_.w);
  zero(blk.net_t_.l3_.b);
  zero(blk.log_scale_);
  zero(blk.shift_);
  std::iota(blk.perm_.begin(), blk.perm_.end(), std::size_t(0));
  std::iota(blk.inv_perm_.begin(), blk.inv_perm_.end(), std::size_t(0));
}

}  // namespace

TEST_CASE("identity coupling block is the identity with zero logdet") {
  Rng rng(1);
  FlowConfig cfg = test_config(6, 1);
  CouplingBlock<double> blk(cfg, rng);
  make_identity(blk);

  auto x = Tensor<double>::from_vec({2, 6},
                                    {0.3, -1.2, 0.5, 2.0, -0.7, 0.1,
                                     1.0, 0.0, -0.4, 0.9, 1.7, -2.0});
  auto r = blk.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(r.h.data()[i] == doctest::Approx(x.data()[i]));
  CHECK(r.logdet.data()[0] == doctest::Approx(0.0));
  CHECK(r.logdet.data()[1] == doctest::Approx(0.0));

  // identity coupling: inverse is also the identity
  auto back = blk.inverse(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(back.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("constant-subnet coupling matches the scalar evaluation") {
  // d=2, split at 1: x_B = 2.0, constant s~ = 0.5, t = 1.
  Rng rng(2);
  FlowConfig cfg = test_config(2, 1);
  CouplingBlock<double> blk(cfg, rng);
  make_identity(blk);
  // s~ = clamp * tanh(b / clamp) = 0.5  =>  b = clamp * atanh(0.5 / clamp)
  const double clamp = cfg.clamp;
  blk.net_s_.l3_.b.mutable_data()[0] = clamp * std::atanh(0.5 / clamp);
  blk.net_t_.l3_.b.mutable_data()[0] = 1.0;

  auto x = Tensor<double>::from_vec({1, 2}, {0.37, 2.0});
  auto r = blk.forward(x);
  const double expect = 2.0 * std::exp(0.5) + 1.0;
  CHECK(r.h.data()[0] == doctest::Approx(0.37));
  CHECK(r.h.data()[1] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(r.logdet.data()[0] == doctest::Approx(0.5).epsilon(1e-12));

  // algebraic inverse recovers x_B = (y_B - t) * exp(-s~)
  auto back = blk.inverse(r.h);
  CHECK(back.data()[1] == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("block logdet equals log|det| of the numerical Jacobian") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    FlowConfig cfg = test_config(6, 1);
    CouplingBlock<double> blk(cfg, rng);
    auto x = random_vec<double>(6, rng);
    auto fwd = [&](const std::vector<double>& in) {
      autograd::NoGradGuard ng;
      auto r = blk.forward(Tensor<double>::from_vec({1, 6}, in));
      auto h = r.h.data();
      return std::vector<double>(h.begin(), h.end());
    };
    const double numeric = oracles::numerical_logdet(fwd, x);
    auto r = blk.forward(Tensor<double>::from_vec({1, 6}, x));
    CHECK(r.logdet.data()[0] == doctest::Approx(numeric).epsilon(1e-4));
  }
}

TEST_CASE("stack: empty is identity, single block equals coupling_forward") {
  Rng rng(7);
  FlowConfig cfg = test_config(5, 0);
  FlowStack<double> empty(cfg, rng);
  auto x = Tensor<double>::from_vec({1, 5}, {1, -2, 0.5, 3, -0.1});
  auto r = empty.forward(x);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(r.h.data()[i] == x.data()[i]);
  CHECK(r.logdet.data()[0] == 0.0);
  auto inv = empty.inverse(x);
  for (std::size_t i = 0; i < 5; ++i) CHECK(inv.data()[i] == x.data()[i]);

  FlowConfig cfg1 = test_config(5, 1);
  Rng rng_a(99), rng_b(99);
  FlowStack<double> one(cfg1, rng_a);
  CouplingBlock<double> lone(cfg1, rng_b);
  auto rs = one.forward(x);
  auto rb = lone.forward(x);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(rs.h.data()[i] == doctest::Approx(rb.h.data()[i]));
  CHECK(rs.logdet.data()[0] == doctest::Approx(rb.logdet.data()[0]));
}

TEST_CASE("two-block stack logdet is the sum of block logdets (exact)") {
  Rng rng(11);
  FlowConfig cfg = test_config(6, 2);
  FlowStack<double> stack(cfg, rng);
  auto x = Tensor<double>::from_vec({1, 6}, random_vec<double>(6, rng));
  auto total = stack.forward(x);
  auto r0 = stack.blocks()[0].forward(x);
  auto r1 = stack.blocks()[1].forward(r0.h);
  CHECK(total.logdet.data()[0] ==
        r0.logdet.data()[0] + r1.logdet.data()[0]);  // identical fp sequence
}

TEST_CASE("bijectivity: round trips through random stacks") {
  SUBCASE("float, 1000 vectors, 8 blocks, max |err| <= 1e-4") {
    Rng rng(13);
    FlowConfig cfg = test_config(8, 8);
    FlowStack<float> stack(cfg, rng);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
      auto v = random_vec<float>(8, rng);
      auto h = stack.forward(Tensor<float>::from_vec({1, 8}, v));
      auto back = stack.inverse(h.h);
      for (std::size_t j = 0; j < v.size(); ++j)
        worst = std::max(worst,
                         std::abs(double(back.data()[j]) - double(v[j])));
    }
    CHECK(worst <= 1e-4);
  }
  SUBCASE("double, max |err| <= 1e-10") {
    Rng rng(17);
    FlowConfig cfg = test_config(8, 8);
    FlowStack<double> stack(cfg, rng);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      auto v = random_vec<double>(8, rng);
      auto h = stack.forward(Tensor<double>::from_vec({1, 8}, v));
      auto back = stack.inverse(h.h);
      for (std::size_t j = 0; j < v.size(); ++j)
        worst = std::max(worst, std::abs(back.data()[j] - v[j]));
    }
    CHECK(worst <= 1e-10);
  }
  SUBCASE("inverse-then-forward also returns to start") {
    Rng rng(19);
    FlowConfig cfg = test_config(6, 4);
    FlowStack<double> stack(cfg, rng);
    auto v = random_vec<double>(6, rng);
    auto z = stack.inverse(Tensor<double>::from_vec({1, 6}, v));
    auto fwd = stack.forward(z);
    for (std::size_t j = 0; j < v.size(); ++j)
      CHECK(fwd.h.data()[j] == doctest::Approx(v[j]).epsilon(1e-10));
  }
}

TEST_CASE("clamped log-scale stays within the clamp bound") {
  Rng rng(23);
  FlowConfig cfg = test_config(6, 4);
  cfg.last_layer_gain = 5.0;  // drive the subnets hard
  FlowStack<double> stack(cfg, rng);
  // Large inputs: per-sample |logdet| contribution of the coupling half is
  // bounded by dB * clamp per block plus the global affine (still zero-init).
  for (int i = 0; i < 50; ++i) {
    auto v = random_vec<double>(6, rng, -50, 50);
    auto r = stack.forward(Tensor<double>::from_vec({1, 6}, v));
    CHECK(std::isfinite(r.logdet.data()[0]));
    CHECK(std::abs(r.logdet.data()[0]) <= cfg.blocks * 3 * cfg.clamp + 1e-9);
  }
}

TEST_CASE("paper preset accepts 24-vectors with 32 blocks") {
  Rng rng(29);
  FlowConfig cfg = FlowConfig::paper_preset();
  CHECK(cfg.blocks == 32);
  CHECK(cfg.hidden == 128);
  FlowStack<float> stack(cfg, rng);
  auto v = random_vec<float>(24, rng);
  auto r = stack.forward(Tensor<float>::from_vec({1, 24}, v));
  CHECK(r.h.size() == 24);
  auto back = stack.inverse(r.h);
  for (std::size_t j = 0; j < 24; ++j)
    CHECK(back.data()[j] == doctest::Approx(v[j]).epsilon(1e-3));
}

TEST_CASE("flow forward gradient passes the finite-difference check") {
  Rng rng(31);
  FlowConfig cfg = test_config(8, 3);
  FlowStack<double> stack(cfg, rng);
  auto fn = [&](std::vector<Tensor<double>>& in) {
    auto r = stack.forward(in[0]);
    // Mix h and logdet so both paths are exercised.
    return add(mean(square(r.h)), mean(r.logdet));
  };
  auto x = Tensor<double>::from_vec({2, 8}, random_vec<double>(16, rng));
  const double err = finite_diff_check<double>(fn, {x}, 1e-5);
  CHECK(err <= 1e-6);
}

TEST_CASE("non-finite subnet outputs raise a structured error") {
  Rng rng(37);
  FlowConfig cfg = test_config(4, 1);
  CouplingBlock<double> blk(cfg, rng);
  blk.net_s_.l1_.w.mutable_data()[0] =
      std::numeric_limits<double>::quiet_NaN();
  auto x = Tensor<double>::from_vec({1, 4}, {1, 2, 3, 4});
  CHECK_THROWS_AS(blk.forward(x), ValueError);
}
