#pragma once

// End-to-end optimization of encoder, decoder, flow, and GMM means, with
// per-epoch metrics and best-validation model selection.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowcf/dataset.hpp"
#include "flowcf/model.hpp"

namespace flowcf {

struct TrainConfig {
  double learning_rate = 1e-3;  // desk default; paper runs 1e-4
  double gamma = 0.99;          // exponential decay per epoch
  std::size_t batch_size = 64;  // paper: 128
  std::size_t epochs = 30;      // paper: 100
  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};
  std::uint64_t seed = 1;
  LossWeights loss;
  double clip_norm = 10.0;  // global-norm gradient clip
  bool augment = true;      // random-rotation augmentation, train split only

  void validate() const {
    if (!(learning_rate > 0)) throw ValueError("TrainConfig: lr must be > 0");
    if (!(gamma > 0) || gamma > 1.0)
      throw ValueError("TrainConfig: need 0 < gamma <= 1");
    if (batch_size < 2)
      throw ValueError("TrainConfig: batch_size must be >= 2");
    if (epochs == 0) throw ValueError("TrainConfig: epochs must be >= 1");
    const double sum = split_ratios[0] + split_ratios[1] + split_ratios[2];
    if (std::abs(sum - 1.0) > 1e-9)
      throw ValueError("TrainConfig: split ratios must sum to 1");
    loss.validate();
  }

  static TrainConfig paper_preset() {
    TrainConfig c;
    c.learning_rate = 1e-4;
    c.batch_size = 128;
    c.epochs = 100;
    return c;
  }
};

// learning_rate * gamma^epoch
double lr_at(std::size_t epoch, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Adam with bias correction: beta1 0.9, beta2 0.999, eps 1e-8.
// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParamList<float>& params);

  // One update over every trainable parameter with a populated gradient.
  // Throws ValueError naming the parameter on non-finite gradients.
  void step(ParamList<float>& params, double lr);

  std::size_t steps() const { return t_; }

  // checkpoint plumbing
  std::vector<std::vector<float>>& first_moments() { return m_; }
  std::vector<std::vector<float>>& second_moments() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

 private:
  std::vector<std::vector<float>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0;
  double train_total = 0, train_recon = 0, train_mmd = 0, train_ib = 0;
  double val_total = 0, val_recon = 0, val_mmd = 0, val_ib = 0;
  double val_accuracy = 0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0;
  std::size_t optimizer_steps = 0;
  std::vector<std::string> warnings;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Runs epochs [start_epoch, config.epochs). The dataset is split internally
// (stratified, seeded by config.seed). On return the model and optimizer
// hold the best-validation-accuracy state (ties resolved to the earlier
// epoch). `rng` drives shuffling, augmentation, and MMD target draws; pass
// a checkpointed state to resume bit-exactly.
TrainResult train(Model& model, Adam& adam, const Dataset& dataset,
                  const TrainConfig& config, Rng& rng,
                  std::size_t start_epoch = 0,
                  const EpochCallback& on_epoch = nullptr);

// Loss breakdown + accuracy of a frozen model over a dataset split
// (evaluation mode, no augmentation).
struct EvalStats {
  double total = 0, recon = 0, mmd = 0, ib = 0;
  double accuracy = 0;
};
EvalStats evaluate(Model& model, const Dataset& data, const LossWeights& w,
                   std::size_t batch_size, Rng& rng);

// Batched nearest-mean predictions for a dataset (evaluation mode).
std::vector<int> predict_dataset(Model& model, const Dataset& data,
                                 std::size_t batch_size);

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

// ---------------------------------------------------------------------------
// Checkpoints
//   magic "FCF1" | u32 LE header length | UTF-8 text header (config,
//   training state, tensor manifest) | raw f32 LE payloads in manifest order
// ---------------------------------------------------------------------------

struct CheckpointMeta {
  ModelConfig model;
  TrainConfig train;
  std::size_t epoch = 0;  // epochs completed so far
  double best_val_accuracy = 0;
  std::string rng_state;
};

void save_checkpoint(const std::string& path, Model& model, Adam& adam,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  Adam adam;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Throws ValueError when two model configurations cannot share parameters.
void check_model_compatible(const ModelConfig& a, const ModelConfig& b);

}  // namespace flowcf
