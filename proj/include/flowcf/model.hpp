#pragma once

// Bundles encoder, decoder, flow, and GMM head into one trainable model
// with a shared parameter registry.

#include <cstdint>
#include <string>
#include <vector>

#include "flowcf/flow.hpp"
#include "flowcf/nn.hpp"
#include "flowcf/objectives.hpp"

namespace flowcf {

struct ModelConfig {
  AutoencoderConfig autoencoder;
  FlowConfig flow;
  std::size_t num_classes = 6;
  double gmm_init_scale = 5.0;
  std::uint64_t feature_seed = 0x5eed;  // random-feature extractor

  void validate() const {
    autoencoder.validate();
    flow.validate();
    if (num_classes < 2) throw ValueError("ModelConfig: need >= 2 classes");
    if (flow.dim != autoencoder.z1_dim)
      throw ValueError("ModelConfig: flow dim " + std::to_string(flow.dim) +
                       " != z1_dim " + std::to_string(autoencoder.z1_dim));
  }

  static ModelConfig desk_preset(std::size_t num_classes = 6) {
    ModelConfig c;
    c.autoencoder = AutoencoderConfig::desk_preset();
    c.flow = FlowConfig::desk_preset();
    c.num_classes = num_classes;
    return c;
  }

  static ModelConfig paper_preset(std::size_t num_classes = 10) {
    ModelConfig c;
    c.autoencoder = AutoencoderConfig::paper_preset();
    c.flow = FlowConfig::paper_preset();
    c.num_classes = num_classes;
    return c;
  }
};

template <typename T>
struct ModelT {
  ModelT() = default;

  ModelT(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
    cfg.validate();
    Rng rng(seed);
    encoder = Encoder<T>(cfg.autoencoder, rng);
    decoder = Decoder<T>(cfg.autoencoder, rng);
    flow = FlowStack<T>(cfg.flow, rng);
    gmm = GmmHead<T>(cfg.num_classes, cfg.flow.dim, rng, cfg.gmm_init_scale);
    extractor = RandomFeatureExtractor<T>(cfg.autoencoder.channels,
                                          cfg.feature_seed);
  }

  ParamList<T> params() {
    ParamList<T> out;
    encoder.collect(out);
    decoder.collect(out);
    flow.collect(out);
    gmm.collect(out);
    return out;
  }

  // Full inference pipeline on a batch of images (eval mode): encode, take
  // z1 through the flow, classify by nearest mean.
  std::vector<int> predict(const Tensor<T>& images) {
    autograd::NoGradGuard no_grad;
    LatentCode<T> code = encoder.encode(images, /*training=*/false);
    FlowResult<T> fr = flow.forward(code.z1);
    return gmm.nearest_mean_batch(fr.h);
  }

  ModelConfig cfg;
  Encoder<T> encoder;
  Decoder<T> decoder;
  FlowStack<T> flow;
  GmmHead<T> gmm;
  RandomFeatureExtractor<T> extractor;
};

using Model = ModelT<float>;

}  // namespace flowcf
