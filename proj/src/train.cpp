#include "flowcf/train.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace flowcf {

double lr_at(std::size_t epoch, const TrainConfig& config) {
  return config.learning_rate *
         std::pow(config.gamma, static_cast<double>(epoch));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(const ParamList<float>& params) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    m_.emplace_back(p.tensor.size(), 0.f);
    v_.emplace_back(p.tensor.size(), 0.f);
  }
}

void Adam::step(ParamList<float>& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  std::size_t slot = 0;
  for (auto& p : params) {
    if (!p.trainable) continue;
    if (slot >= m_.size()) throw Error("Adam: parameter list grew after init");
    if (!p.tensor.has_grad()) {
      ++slot;
      continue;
    }
    auto grad = p.tensor.grad();
    auto vals = p.tensor.mutable_data();
    auto& m = m_[slot];
    auto& v = v_[slot];
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g))
        throw ValueError("Adam: non-finite gradient in parameter '" + p.name +
                         "'");
      m[i] = static_cast<float>(beta1 * m[i] + (1.0 - beta1) * g);
      v[i] = static_cast<float>(beta2 * v[i] + (1.0 - beta2) * g * g);
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      vals[i] = static_cast<float>(vals[i] -
                                   lr * m_hat / (std::sqrt(v_hat) + epsilon));
    }
    ++slot;
  }
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

namespace {

Tensor<float> assemble_batch(const Dataset& data,
                             const std::vector<std::size_t>& indices,
                             std::size_t begin, std::size_t end,
                             std::size_t image_size, bool augment, Rng& rng,
                             std::vector<int>& labels_out) {
  const std::size_t m = end - begin;
  const std::size_t c = data.channels;
  std::vector<float> batch(m * c * image_size * image_size);
  labels_out.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t idx = indices[begin + i];
    std::vector<float> img =
        augment ? preprocess(data.sample(idx), data.height, data.width, c,
                             image_size, rng)
                : to_float_chw(data.sample(idx), data.height, data.width, c,
                               image_size);
    std::copy(img.begin(), img.end(),
              batch.begin() + i * c * image_size * image_size);
    labels_out[i] = data.labels[idx];
  }
  return Tensor<float>::from_vec({m, c, image_size, image_size},
                                 std::move(batch));
}

// Forward pass shared by training and evaluation.
LossBreakdown<float> forward_losses(Model& model, const Tensor<float>& x,
                                    const std::vector<int>& labels,
                                    const LossWeights& weights, Rng& rng,
                                    bool training) {
  Tensor<float> z = model.encoder.forward(x, training);
  auto [z1, z2] = split_cols(z, model.cfg.autoencoder.z1_dim);
  FlowResult<float> fr = model.flow.forward(z1);
  Tensor<float> x_rec = model.decoder.forward(z, training);
  Tensor<float> n =
      Tensor<float>::randn({z.dim(0), z.dim(1)}, rng, 1.f, false);
  return total_loss(x, x_rec, z, n, fr.h, fr.logdet, labels, model.gmm,
                    weights, &model.extractor);
}

double grad_global_norm(ParamList<float>& params) {
  double acc = 0;
  for (auto& p : params) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    for (const float g : p.tensor.grad()) acc += double(g) * double(g);
  }
  return std::sqrt(acc);
}

void scale_grads(ParamList<float>& params, double factor) {
  for (auto& p : params) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    auto g = p.tensor.grad_accum();
    for (auto& v : g) v = static_cast<float>(v * factor);
  }
}

struct Snapshot {
  std::vector<std::vector<float>> tensors;
  std::vector<std::vector<float>> adam_m, adam_v;
  std::size_t adam_t = 0;
  std::string rng_state;

  void capture(ParamList<float>& params, Adam& adam, const Rng& rng) {
    tensors.clear();
    for (auto& p : params)
      tensors.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    adam_m = adam.first_moments();
    adam_v = adam.second_moments();
    adam_t = adam.steps();
    rng_state = rng.save_state();
  }

  void restore(ParamList<float>& params, Adam& adam, Rng& rng) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].tensor.mutable_data();
      std::copy(tensors[i].begin(), tensors[i].end(), dst.begin());
    }
    adam.first_moments() = adam_m;
    adam.second_moments() = adam_v;
    adam.set_steps(adam_t);
    rng.load_state(rng_state);
  }
};

}  // namespace

std::vector<int> predict_dataset(Model& model, const Dataset& data,
                                 std::size_t batch_size) {
  autograd::NoGradGuard no_grad;
  const std::size_t image_size = model.cfg.autoencoder.image_size;
  std::vector<std::size_t> order(data.n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::vector<int> preds;
  preds.reserve(data.n);
  Rng unused(0);
  for (std::size_t at = 0; at < data.n; at += batch_size) {
    const std::size_t end = std::min(at + batch_size, data.n);
    std::vector<int> labels;
    Tensor<float> x = assemble_batch(data, order, at, end, image_size,
                                     /*augment=*/false, unused, labels);
    LatentCode<float> code = model.encoder.encode(x, false);
    FlowResult<float> fr = model.flow.forward(code.z1);
    for (int p : model.gmm.nearest_mean_batch(fr.h)) preds.push_back(p);
  }
  return preds;
}

EvalStats evaluate(Model& model, const Dataset& data, const LossWeights& w,
                   std::size_t batch_size, Rng& rng) {
  autograd::NoGradGuard no_grad;
  const std::size_t image_size = model.cfg.autoencoder.image_size;
  std::vector<std::size_t> order(data.n);
  std::iota(order.begin(), order.end(), std::size_t(0));

  EvalStats stats;
  std::size_t correct = 0, counted = 0, batches = 0;
  for (std::size_t at = 0; at < data.n; at += batch_size) {
    const std::size_t end = std::min(at + batch_size, data.n);
    if (end - at < 2) break;  // MMD needs m >= 2
    std::vector<int> labels;
    Tensor<float> x = assemble_batch(data, order, at, end, image_size, false,
                                     rng, labels);
    Tensor<float> z = model.encoder.forward(x, false);
    auto [z1, z2] = split_cols(z, model.cfg.autoencoder.z1_dim);
    FlowResult<float> fr = model.flow.forward(z1);
    Tensor<float> x_rec = model.decoder.forward(z, false);
    Tensor<float> n = Tensor<float>::randn({z.dim(0), z.dim(1)}, rng);
    auto lb = total_loss(x, x_rec, z, n, fr.h, fr.logdet, labels, model.gmm,
                         w, &model.extractor);
    stats.total += lb.total.value();
    stats.recon += lb.recon.value();
    stats.mmd += lb.mmd.value();
    stats.ib += lb.ib.value();
    ++batches;
    auto preds = model.gmm.nearest_mean_batch(fr.h);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == labels[i]) ++correct;
      ++counted;
    }
  }
  if (batches == 0) throw ValueError("evaluate: dataset too small");
  stats.total /= double(batches);
  stats.recon /= double(batches);
  stats.mmd /= double(batches);
  stats.ib /= double(batches);
  stats.accuracy = counted ? double(correct) / double(counted) : 0.0;
  return stats;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

TrainResult train(Model& model, Adam& adam, const Dataset& dataset,
                  const TrainConfig& config, Rng& rng,
                  std::size_t start_epoch, const EpochCallback& on_epoch) {
  config.validate();
  dataset.validate();
  Eigen::setNbThreads(1);  // sample-level OpenMP owns the parallelism

  SplitResult split =
      stratified_split(dataset, config.split_ratios, config.seed);

  TrainResult result;
  const auto train_counts = split.train.class_counts();
  for (std::size_t c = 0; c < train_counts.size(); ++c)
    if (train_counts[c] == 0)
      result.warnings.push_back("class '" + dataset.class_names[c] +
                                "' missing from the training split");

  ParamList<float> params = model.params();
  const std::size_t image_size = model.cfg.autoencoder.image_size;

  Snapshot best;
  bool have_best = false;

  std::vector<std::size_t> order(split.train.n);
  std::iota(order.begin(), order.end(), std::size_t(0));

  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    rng.shuffle(order);

    double ep_total = 0, ep_recon = 0, ep_mmd = 0, ep_ib = 0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < split.train.n; at += config.batch_size) {
      const std::size_t end =
          std::min(at + config.batch_size, split.train.n);
      if (end - at < 2) break;  // a singleton remainder cannot feed MMD
      std::vector<int> labels;
      Tensor<float> x =
          assemble_batch(split.train, order, at, end, image_size,
                         config.augment, rng, labels);
      LossBreakdown<float> lb;
      try {
        lb = forward_losses(model, x, labels, config.loss, rng, true);
        lb.total.backward();
      } catch (const ValueError& e) {
        throw ValueError("training aborted at epoch " +
                         std::to_string(epoch) + ", batch " +
                         std::to_string(batches) + ": " + e.what());
      }

      if (config.clip_norm > 0) {
        const double norm = grad_global_norm(params);
        if (norm > config.clip_norm) scale_grads(params, config.clip_norm / norm);
      }
      adam.step(params, lr);
      for (auto& p : params) p.tensor.zero_grad();

      ep_total += lb.total.value();
      ep_recon += lb.recon.value();
      ep_mmd += lb.mmd.value();
      ep_ib += lb.ib.value();
      ++batches;
    }
    if (batches == 0) throw ValueError("train: training split too small");

    // validation pass with an epoch-derived stream so resume stays bit-exact
    Rng val_rng(config.seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
    EvalStats val = evaluate(model, split.val, config.loss,
                             config.batch_size, val_rng);

    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    em.train_total = ep_total / double(batches);
    em.train_recon = ep_recon / double(batches);
    em.train_mmd = ep_mmd / double(batches);
    em.train_ib = ep_ib / double(batches);
    em.val_total = val.total;
    em.val_recon = val.recon;
    em.val_mmd = val.mmd;
    em.val_ib = val.ib;
    em.val_accuracy = val.accuracy;
    result.history.push_back(em);
    if (on_epoch) on_epoch(em);

    if (!have_best || val.accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = val.accuracy;
      result.best_epoch = epoch;
      best.capture(params, adam, rng);
      have_best = true;
    }
  }

  if (have_best) best.restore(params, adam, rng);
  result.optimizer_steps = adam.steps();
  return result;
}

std::string metrics_csv_header() {
  return "epoch,lr,train_total,train_recon,train_mmd,train_ib,"
         "val_total,val_recon,val_mmd,val_ib,val_accuracy";
}

std::string metrics_csv_row(const EpochMetrics& m) {
  char buf[400];
  std::snprintf(buf, sizeof(buf),
                "%zu,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.6f",
                m.epoch, m.lr, m.train_total, m.train_recon, m.train_mmd,
                m.train_ib, m.val_total, m.val_recon, m.val_mmd, m.val_ib,
                m.val_accuracy);
  return buf;
}

}  // namespace flowcf
