#pragma once

// Encoder / decoder networks. The encoder stacks [DoubleConv -> MaxPool ->
// ResBlock*k] stages and ends in a dense layer producing the latent vector,
// split into a class-dependent z1 and class-independent z2. The decoder
// mirrors it with [Upsample -> DoubleConv -> ResBlock*k] stages and a final
// conv + sigmoid so pixels land in [0,1].

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "flowcf/ops.hpp"
#include "flowcf/ops_conv.hpp"
#include "flowcf/rng.hpp"
#include "flowcf/tensor.hpp"

namespace flowcf {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

struct AutoencoderConfig {
  std::size_t image_size = 64;
  std::size_t channels = 3;
  std::size_t base_filters = 8;
  std::size_t max_filters = 0;  // 0 = no cap
  std::size_t stages = 4;
  std::size_t latent_dim = 32;
  std::size_t z1_dim = 24;
  std::size_t resblocks_per_stage = 2;
  UpsampleMode upsample = UpsampleMode::kBilinear;

  std::size_t z2_dim() const { return latent_dim - z1_dim; }

  std::size_t filters_at(std::size_t stage) const {
    const std::size_t f = base_filters << stage;
    return (max_filters > 0 && f > max_filters) ? max_filters : f;
  }

  std::size_t bottleneck_hw() const { return image_size >> stages; }

  std::size_t flatten_dim() const {
    return filters_at(stages - 1) * bottleneck_hw() * bottleneck_hw();
  }

  void validate() const {
    if (stages == 0) throw ValueError("AutoencoderConfig: stages must be >= 1");
    if (image_size % (std::size_t(1) << stages) != 0)
      throw ValueError("AutoencoderConfig: image_size " +
                       std::to_string(image_size) + " not divisible by 2^" +
                       std::to_string(stages));
    if (bottleneck_hw() == 0)
      throw ValueError("AutoencoderConfig: too many stages for image size");
    if (z1_dim == 0 || z1_dim >= latent_dim)
      throw ValueError(
          "AutoencoderConfig: need 0 < z1_dim < latent_dim (z2 nonempty)");
    if (channels == 0 || base_filters == 0)
      throw ValueError("AutoencoderConfig: channels/base_filters must be >= 1");
  }

  // 256x256x3, 6 stages, filters capped at 128 so the bottleneck flattens to
  // 2048, latent 32 split 24/8.
  static AutoencoderConfig paper_preset() {
    AutoencoderConfig c;
    c.image_size = 256;
    c.channels = 3;
    c.base_filters = 8;
    c.max_filters = 128;
    c.stages = 6;
    c.latent_dim = 32;
    c.z1_dim = 24;
    c.resblocks_per_stage = 6;
    return c;
  }

  // CPU-sized default: 64x64x3, 4 stages, same 24/8 latent split.
  static AutoencoderConfig desk_preset() { return AutoencoderConfig{}; }
};

template <typename T>
struct LatentCode {
  Tensor<T> z1;  // class-dependent
  Tensor<T> z2;  // class-independent
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace nn_detail {

// Scaled-uniform fan-in init: U(+-gain*sqrt(3/fan_in)).
template <typename T>
Tensor<T> init_uniform(const Shape& shape, std::size_t fan_in, Rng& rng,
                       double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  return Tensor<T>::uniform(shape, rng, static_cast<T>(-bound),
                            static_cast<T>(bound), true);
}

}  // namespace nn_detail

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0)
      : w(nn_detail::init_uniform<T>({in, out}, in, rng, gain)),
        b(Tensor<T>::zeros({out}, true)) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return add_rowvec(matmul(x, w), b);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".w", w, true});
    out.push_back({prefix + ".b", b, true});
  }

  Tensor<T> w, b;
};

template <typename T>
class Conv {
 public:
  Conv() = default;
  // 3x3 kernels get "same" zero padding; 1x1 kernels none.
  Conv(std::size_t in, std::size_t out, std::size_t k, bool bias, Rng& rng,
       double gain = 1.0)
      : w(nn_detail::init_uniform<T>({out, in, k, k}, in * k * k, rng, gain)),
        pad_(k / 2), has_bias_(bias) {
    if (bias) b = Tensor<T>::zeros({out}, true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return has_bias_ ? conv2d(x, w, b, pad_) : conv2d(x, w, pad_);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".w", w, true});
    if (has_bias_) out.push_back({prefix + ".b", b, true});
  }

  Tensor<T> w, b;

 private:
  std::size_t pad_ = 0;
  bool has_bias_ = false;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : gamma(Tensor<T>::full({channels}, T(1), true)),
        beta(Tensor<T>::zeros({channels}, true)),
        running_mean(Tensor<T>::zeros({channels})),
        running_var(Tensor<T>::full({channels}, T(1))) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (training) {
      std::vector<T> bm, bv;
      Tensor<T> y = batchnorm2d_train(x, gamma, beta, eps, &bm, &bv);
      // Unbiased running variance, biased normalization (the usual split).
      const std::size_t m = x.dim(0) * x.dim(2) * x.dim(3);
      const T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      for (std::size_t c = 0; c < rm.size(); ++c) {
        rm[c] = (T(1) - momentum) * rm[c] + momentum * bm[c];
        rv[c] = (T(1) - momentum) * rv[c] + momentum * bv[c] * unbias;
      }
      return y;
    }
    const auto g = gamma.data(), be = beta.data();
    const auto rm = running_mean.data(), rv = running_var.data();
    std::vector<T> scale(g.size()), shift(g.size());
    for (std::size_t c = 0; c < g.size(); ++c) {
      scale[c] = g[c] / std::sqrt(rv[c] + eps);
      shift[c] = be[c] - rm[c] * scale[c];
    }
    return channel_affine(x, std::move(scale), std::move(shift));
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".gamma", gamma, true});
    out.push_back({prefix + ".beta", beta, true});
    out.push_back({prefix + ".running_mean", running_mean, false});
    out.push_back({prefix + ".running_var", running_var, false});
  }

  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;  // buffers, not optimized
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);
};

// Two [Conv3x3 -> BN -> ReLU] sequences; the first conv changes channels.
template <typename T>
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(std::size_t in, std::size_t out, Rng& rng)
      : conv1_(in, out, 3, false, rng),
        bn1_(out),
        conv2_(out, out, 3, false, rng),
        bn2_(out) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> y = relu(bn1_.forward(conv1_.forward(x), training));
    return relu(bn2_.forward(conv2_.forward(y), training));
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    conv1_.collect(prefix + ".conv1", out);
    bn1_.collect(prefix + ".bn1", out);
    conv2_.collect(prefix + ".conv2", out);
    bn2_.collect(prefix + ".bn2", out);
  }

 private:
  Conv<T> conv1_, conv2_;
  BatchNorm<T> bn1_, bn2_;
};

// Residual block: x + Conv1(ReLU(Conv3(ReLU(Conv3(ReLU(Conv1(x))))))).
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(std::size_t ch, Rng& rng)
      : c1_(ch, ch, 1, true, rng),
        c2_(ch, ch, 3, true, rng),
        c3_(ch, ch, 3, true, rng),
        c4_(ch, ch, 1, true, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = relu(c1_.forward(x));
    y = relu(c2_.forward(y));
    y = relu(c3_.forward(y));
    y = c4_.forward(y);
    return add(x, y);
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    c1_.collect(prefix + ".c1", out);
    c2_.collect(prefix + ".c2", out);
    c3_.collect(prefix + ".c3", out);
    c4_.collect(prefix + ".c4", out);
  }

 private:
  Conv<T> c1_, c2_, c3_, c4_;
};

// ---------------------------------------------------------------------------
// Encoder / Decoder
// ---------------------------------------------------------------------------

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const AutoencoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    std::size_t in_ch = cfg.channels;
    for (std::size_t s = 0; s < cfg.stages; ++s) {
      const std::size_t f = cfg.filters_at(s);
      stages_.push_back(Stage{DoubleConv<T>(in_ch, f, rng), {}});
      for (std::size_t r = 0; r < cfg.resblocks_per_stage; ++r)
        stages_.back().resblocks.emplace_back(f, rng);
      in_ch = f;
    }
    // Small gain keeps the initial latent near the origin, easing MMD
    // matching against a standard normal.
    head_ = Dense<T>(cfg.flatten_dim(), cfg.latent_dim, rng, 0.1);
  }

  // (N,C,H,W) in [0,1] -> (N, latent_dim)
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    check_input(x);
    Tensor<T> y = x;
    for (auto& st : stages_) {
      y = st.dc.forward(y, training);
      y = maxpool2d(y, 2);
      for (auto& rb : st.resblocks) y = rb.forward(y);
    }
    y = reshape(y, {y.dim(0), cfg_.flatten_dim()});
    return head_.forward(y);
  }

  // Splits the latent at z1_dim; concatenation order (z1,z2) is fixed.
  LatentCode<T> encode(const Tensor<T>& x, bool training) {
    Tensor<T> z = forward(x, training);
    auto [z1, z2] = split_cols(z, cfg_.z1_dim);
    return {z1, z2};
  }

  void collect(ParamList<T>& out) {
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const std::string p = "encoder.stage" + std::to_string(s);
      stages_[s].dc.collect(p + ".dc", out);
      for (std::size_t r = 0; r < stages_[s].resblocks.size(); ++r)
        stages_[s].resblocks[r].collect(p + ".rb" + std::to_string(r), out);
    }
    head_.collect("encoder.head", out);
  }

  const AutoencoderConfig& config() const { return cfg_; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != cfg_.channels ||
        x.dim(2) != cfg_.image_size || x.dim(3) != cfg_.image_size)
      throw ShapeError("encode: expected (N," + std::to_string(cfg_.channels) +
                       "," + std::to_string(cfg_.image_size) + "," +
                       std::to_string(cfg_.image_size) + "), got " +
                       shape_str(x.shape()));
    for (const T v : x.data())
      if (!(v >= T(0) && v <= T(1)))
        throw ValueError("encode: input pixels must lie in [0,1]");
  }

  struct Stage {
    DoubleConv<T> dc;
    std::vector<ResBlock<T>> resblocks;
  };

  AutoencoderConfig cfg_;
  std::vector<Stage> stages_;
  Dense<T> head_;
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const AutoencoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    head_ = Dense<T>(cfg.latent_dim, cfg.flatten_dim(), rng);
    std::size_t in_ch = cfg.filters_at(cfg.stages - 1);
    for (std::size_t s = cfg.stages; s-- > 0;) {
      const std::size_t f = cfg.filters_at(s == 0 ? 0 : s - 1);
      stages_.push_back(Stage{DoubleConv<T>(in_ch, f, rng), {}});
      for (std::size_t r = 0; r < cfg.resblocks_per_stage; ++r)
        stages_.back().resblocks.emplace_back(f, rng);
      in_ch = f;
    }
    out_conv_ = Conv<T>(in_ch, cfg.channels, 3, true, rng);
  }

  // (N, latent_dim) -> (N,C,H,W) in [0,1]
  Tensor<T> forward(const Tensor<T>& z, bool training) {
    if (z.ndim() != 2 || z.dim(1) != cfg_.latent_dim)
      throw ShapeError("decode: expected (N," +
                       std::to_string(cfg_.latent_dim) + "), got " +
                       shape_str(z.shape()));
    const std::size_t hw = cfg_.bottleneck_hw();
    Tensor<T> y = head_.forward(z);
    y = reshape(y, {z.dim(0), cfg_.filters_at(cfg_.stages - 1), hw, hw});
    for (auto& st : stages_) {
      y = upsample2d(y, 2, cfg_.upsample);
      y = st.dc.forward(y, training);
      for (auto& rb : st.resblocks) y = rb.forward(y);
    }
    return sigmoid(out_conv_.forward(y));
  }

  Tensor<T> decode(const LatentCode<T>& code, bool training) {
    if (code.z1.ndim() != 2 || code.z1.dim(1) != cfg_.z1_dim ||
        code.z2.ndim() != 2 || code.z2.dim(1) != cfg_.z2_dim())
      throw ShapeError("decode: latent code dims do not match config");
    return forward(concat_cols(code.z1, code.z2), training);
  }

  void collect(ParamList<T>& out) {
    head_.collect("decoder.head", out);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const std::string p = "decoder.stage" + std::to_string(s);
      stages_[s].dc.collect(p + ".dc", out);
      for (std::size_t r = 0; r < stages_[s].resblocks.size(); ++r)
        stages_[s].resblocks[r].collect(p + ".rb" + std::to_string(r), out);
    }
    out_conv_.collect("decoder.out", out);
  }

  const AutoencoderConfig& config() const { return cfg_; }

 private:
  struct Stage {
    DoubleConv<T> dc;
    std::vector<ResBlock<T>> resblocks;
  };

  AutoencoderConfig cfg_;
  Dense<T> head_;
  std::vector<Stage> stages_;
  Conv<T> out_conv_;
};

}  // namespace flowcf
