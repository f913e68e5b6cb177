#pragma once

// Invertible flow between the class-dependent latent z1 and the hidden
// space h1. Each block is an affine coupling (split at ceil(d/2)) followed
// by a fixed random permutation and a learnable per-coordinate affine; all
// three pieces have closed-form inverses and exact log-determinants.

#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "flowcf/nn.hpp"
#include "flowcf/ops.hpp"
#include "flowcf/rng.hpp"
#include "flowcf/tensor.hpp"

namespace flowcf {

struct FlowConfig {
  std::size_t dim = 24;
  std::size_t blocks = 8;
  std::size_t hidden = 64;
  double clamp = 2.0;
  double leaky_slope = 0.01;
  // Final subnet layers start at zero so the stack begins as a pure
  // permutation; tests raise this to exercise non-trivial couplings.
  double last_layer_gain = 0.0;

  void validate() const {
    if (dim < 2) throw ValueError("FlowConfig: dim must be >= 2");
    if (hidden == 0) throw ValueError("FlowConfig: hidden must be >= 1");
    if (!(clamp > 0)) throw ValueError("FlowConfig: clamp must be > 0");
  }

  // 32 blocks with 24->128->128->24 subnets.
  static FlowConfig paper_preset() {
    FlowConfig c;
    c.blocks = 32;
    c.hidden = 128;
    return c;
  }

  static FlowConfig desk_preset() { return FlowConfig{}; }
};

template <typename T>
struct FlowResult {
  Tensor<T> h;       // (m, d)
  Tensor<T> logdet;  // (m)
};

// Three-layer dense subnet with LeakyReLU, mapping the unchanged coupling
// half to a transformation of the other half.
template <typename T>
class CouplingSubnet {
 public:
  CouplingSubnet() = default;
  CouplingSubnet(std::size_t in, std::size_t hidden, std::size_t out,
                 double slope, double final_gain, Rng& rng)
      : l1_(in, hidden, rng),
        l2_(hidden, hidden, rng),
        l3_(hidden, out, rng, final_gain),
        slope_(slope) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = leaky_relu(l1_.forward(x), slope_);
    y = leaky_relu(l2_.forward(y), slope_);
    y = l3_.forward(y);
    for (const T v : y.data())
      if (!std::isfinite(static_cast<double>(v)))
        throw ValueError("coupling subnet produced a non-finite output");
    return y;
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    l1_.collect(prefix + ".l1", out);
    l2_.collect(prefix + ".l2", out);
    l3_.collect(prefix + ".l3", out);
  }

  Dense<T> l1_, l2_, l3_;

 private:
  double slope_ = 0.01;
};

template <typename T>
class CouplingBlock {
 public:
  CouplingBlock() = default;
  CouplingBlock(const FlowConfig& cfg, Rng& rng)
      : dim_(cfg.dim),
        split_((cfg.dim + 1) / 2),
        clamp_(static_cast<T>(cfg.clamp)) {
    net_s_ = CouplingSubnet<T>(split_, cfg.hidden, dim_ - split_,
                               cfg.leaky_slope, cfg.last_layer_gain, rng);
    net_t_ = CouplingSubnet<T>(split_, cfg.hidden, dim_ - split_,
                               cfg.leaky_slope, cfg.last_layer_gain, rng);
    log_scale_ = Tensor<T>::zeros({dim_}, true);
    shift_ = Tensor<T>::zeros({dim_}, true);
    perm_.resize(dim_);
    std::iota(perm_.begin(), perm_.end(), std::size_t(0));
    rng.shuffle(perm_);
    inv_perm_.resize(dim_);
    for (std::size_t i = 0; i < dim_; ++i) inv_perm_[perm_[i]] = i;
  }

  // y_A = x_A; y_B = x_B * exp(s~) + t with s~ = clamp*tanh(s/clamp);
  // then the permutation, then y = y * exp(a) + b. Per-sample
  // logdet = sum(s~) + sum(a).
  FlowResult<T> forward(const Tensor<T>& x) const {
    check_input(x, "coupling_forward");
    auto [xa, xb] = split_cols(x, split_);
    Tensor<T> s_clamped = clamped_scale(net_s_.forward(xa));
    Tensor<T> t = net_t_.forward(xa);
    Tensor<T> yb = add(mul(xb, exp_op(s_clamped)), t);
    Tensor<T> y = permute_cols(concat_cols(xa, yb), perm_);
    y = add_rowvec(mul_rowvec(y, exp_op(log_scale_)), shift_);
    Tensor<T> logdet =
        add_bcast_scalar(row_sum(s_clamped), sum(log_scale_));
    return {y, logdet};
  }

  // Exact inverse; never recorded on the graph.
  Tensor<T> inverse(const Tensor<T>& y) const {
    check_input(y, "coupling_inverse");
    autograd::NoGradGuard no_grad;
    Tensor<T> x = y;
    {
      // Undo the global affine: (y - b) * exp(-a).
      const auto a = log_scale_.data();
      std::vector<T> inv_scale(a.size());
      for (std::size_t j = 0; j < a.size(); ++j) inv_scale[j] = std::exp(-a[j]);
      x = mul_rowvec(add_rowvec(x, neg_vec(shift_.data())), vec_tensor(inv_scale));
    }
    x = permute_cols(x, inv_perm_);
    auto [xa, yb] = split_cols(x, split_);
    Tensor<T> s_clamped = clamped_scale(net_s_.forward(xa));
    Tensor<T> t = net_t_.forward(xa);
    Tensor<T> xb = mul(sub(yb, t), exp_op(neg(s_clamped)));
    return concat_cols(xa, xb);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    net_s_.collect(prefix + ".s", out);
    net_t_.collect(prefix + ".t", out);
    out.push_back({prefix + ".log_scale", log_scale_, true});
    out.push_back({prefix + ".shift", shift_, true});
  }

  std::size_t dim() const { return dim_; }
  std::size_t split_point() const { return split_; }
  const std::vector<std::size_t>& permutation() const { return perm_; }

  // Test hooks: directly reachable subnet/affine parameters.
  CouplingSubnet<T> net_s_, net_t_;
  Tensor<T> log_scale_, shift_;
  std::vector<std::size_t> perm_, inv_perm_;

 private:
  void check_input(const Tensor<T>& x, const char* op) const {
    if (x.ndim() != 2 || x.dim(1) != dim_)
      throw ShapeError(std::string(op) + ": expected (m," +
                       std::to_string(dim_) + "), got " +
                       shape_str(x.shape()));
  }

  Tensor<T> clamped_scale(const Tensor<T>& s) const {
    // clamp * tanh(s / clamp): soft bound |s~| <= clamp.
    return mul_scalar(tanh_op(mul_scalar(s, 1.0 / double(clamp_))),
                      double(clamp_));
  }

  static Tensor<T> vec_tensor(const std::vector<T>& v) {
    return Tensor<T>::from_vec({v.size()}, std::vector<T>(v.begin(), v.end()));
  }

  static Tensor<T> neg_vec(std::span<const T> v) {
    std::vector<T> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = -v[i];
    return Tensor<T>::from_vec({v.size()}, std::move(out));
  }

  std::size_t dim_ = 0;
  std::size_t split_ = 0;
  T clamp_ = T(2);
};

template <typename T>
class FlowStack {
 public:
  FlowStack() = default;
  FlowStack(const FlowConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    blocks_.reserve(cfg.blocks);
    for (std::size_t i = 0; i < cfg.blocks; ++i) blocks_.emplace_back(cfg, rng);
  }

  // (m, d) -> {(m, d), (m)}: composition of block forwards; total logdet is
  // the sum of the block logdets.
  FlowResult<T> forward(const Tensor<T>& z1) const {
    Tensor<T> h = ensure_matrix(z1, "flow_forward");
    Tensor<T> logdet = Tensor<T>::zeros({h.dim(0)});
    for (const auto& blk : blocks_) {
      FlowResult<T> r = blk.forward(h);
      h = r.h;
      logdet = add(logdet, r.logdet);
    }
    return {h, logdet};
  }

  // (m, d) -> (m, d): blocks inverted in reverse order.
  Tensor<T> inverse(const Tensor<T>& h1) const {
    autograd::NoGradGuard no_grad;
    Tensor<T> z = ensure_matrix(h1, "flow_inverse");
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it)
      z = it->inverse(z);
    return z;
  }

  // Single-vector conveniences.
  std::pair<std::vector<T>, T> forward_vec(std::span<const T> z1) const {
    FlowResult<T> r = forward(
        Tensor<T>::from_vec({1, cfg_.dim}, {z1.begin(), z1.end()}));
    auto h = r.h.data();
    return {std::vector<T>(h.begin(), h.end()), r.logdet.data()[0]};
  }

  std::vector<T> inverse_vec(std::span<const T> h1) const {
    Tensor<T> z = inverse(
        Tensor<T>::from_vec({1, cfg_.dim}, {h1.begin(), h1.end()}));
    auto v = z.data();
    return {v.begin(), v.end()};
  }

  void collect(ParamList<T>& out) {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect("flow.block" + std::to_string(i), out);
  }

  const FlowConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim; }
  const std::vector<CouplingBlock<T>>& blocks() const { return blocks_; }
  std::vector<CouplingBlock<T>>& blocks() { return blocks_; }

 private:
  Tensor<T> ensure_matrix(const Tensor<T>& x, const char* op) const {
    if (x.ndim() == 1 && x.dim(0) == cfg_.dim) return reshape(x, {1, cfg_.dim});
    if (x.ndim() != 2 || x.dim(1) != cfg_.dim)
      throw ShapeError(std::string(op) + ": expected (m," +
                       std::to_string(cfg_.dim) + "), got " +
                       shape_str(x.shape()));
    return x;
  }

  FlowConfig cfg_;
  std::vector<CouplingBlock<T>> blocks_;
};

}  // namespace flowcf
