#pragma once

// Counterfactual engine: classify by nearest mean, push the hidden vector
// across the decision boundary toward the target class, invert the flow,
// and decode with the original z2 untouched.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowcf/metrics.hpp"
#include "flowcf/model.hpp"

namespace flowcf {

// Nearest-mean rule (single shared implementation lives on GmmHead).
template <typename T>
int classify(std::span<const T> h1, const GmmHead<T>& head) {
  return head.nearest_mean(h1);
}

// With delta = mu_tgt - mu_src, the crossing coefficient
//   alpha* = (||h - mu_tgt||^2 - ||h - mu_src||^2) / (2 ||delta||^2)
// places h + alpha* delta exactly on the perpendicular-bisector hyperplane
// of the two means.
template <typename T>
T boundary_alpha(std::span<const T> h1, std::span<const T> mu_src,
                 std::span<const T> mu_tgt) {
  if (h1.size() != mu_src.size() || h1.size() != mu_tgt.size())
    throw ShapeError("boundary_alpha: dimension mismatch");
  T d_src = T(0), d_tgt = T(0), delta_sq = T(0);
  for (std::size_t i = 0; i < h1.size(); ++i) {
    const T ds = h1[i] - mu_src[i];
    const T dt = h1[i] - mu_tgt[i];
    const T dd = mu_tgt[i] - mu_src[i];
    d_src += ds * ds;
    d_tgt += dt * dt;
    delta_sq += dd * dd;
  }
  if (delta_sq == T(0))
    throw ValueError("boundary_alpha: source and target means coincide");
  return (d_tgt - d_src) / (T(2) * delta_sq);
}

template <typename T>
struct HiddenCrossing {
  std::vector<T> h_cf;
  double alpha = 0;        // total coefficient along delta actually applied
  double margin = 0;       // distance past the bisector after escalation
  int escalations = 0;
  int y_src = -1;
};

// Pushes h1 past the source/target bisector by `margin` (default
// 0.25 * ||delta||). If a third mean captures the crossing point the margin
// doubles, up to `max_escalations` times; exhaustion raises an error naming
// the intruding class.
template <typename T>
HiddenCrossing<T> counterfactual_hidden(std::span<const T> h1, int y_cf,
                                        const GmmHead<T>& head,
                                        std::optional<double> margin = {},
                                        int max_escalations = 8) {
  if (y_cf < 0 || std::size_t(y_cf) >= head.num_classes())
    throw ValueError("counterfactual_hidden: target class " +
                     std::to_string(y_cf) + " out of range [0," +
                     std::to_string(head.num_classes()) + ")");
  HiddenCrossing<T> out;
  out.y_src = head.nearest_mean(h1);
  if (out.y_src == y_cf) {  // identity case
    out.h_cf.assign(h1.begin(), h1.end());
    return out;
  }

  const std::vector<T> mu_src = head.mean_of(std::size_t(out.y_src));
  const std::vector<T> mu_tgt = head.mean_of(std::size_t(y_cf));
  std::vector<T> delta(h1.size());
  double delta_norm_sq = 0;
  for (std::size_t i = 0; i < h1.size(); ++i) {
    delta[i] = mu_tgt[i] - mu_src[i];
    delta_norm_sq += double(delta[i]) * double(delta[i]);
  }
  const double delta_norm = std::sqrt(delta_norm_sq);
  if (delta_norm == 0)
    throw ValueError("counterfactual_hidden: degenerate means for classes " +
                     std::to_string(out.y_src) + " and " +
                     std::to_string(y_cf));

  const double alpha_star =
      double(boundary_alpha<T>(h1, mu_src, mu_tgt));
  double m = margin.value_or(0.25 * delta_norm);
  if (m < 0) throw ValueError("counterfactual_hidden: margin must be >= 0");

  int last_label = -1;
  for (int attempt = 0; attempt <= max_escalations; ++attempt) {
    const double alpha = alpha_star + m / delta_norm;
    std::vector<T> h_cf(h1.size());
    for (std::size_t i = 0; i < h1.size(); ++i)
      h_cf[i] = static_cast<T>(h1[i] + alpha * delta[i]);
    last_label = head.nearest_mean(h_cf);
    if (last_label == y_cf) {
      out.h_cf = std::move(h_cf);
      out.alpha = alpha;
      out.margin = m;
      out.escalations = attempt;
      return out;
    }
    m = m > 0 ? 2.0 * m : 1e-3 * delta_norm;
  }
  throw ValueError("counterfactual_hidden: target class " +
                   std::to_string(y_cf) + " not reachable; class " +
                   std::to_string(last_label) +
                   " stays nearer after " +
                   std::to_string(max_escalations) + " margin escalations");
}

// ---------------------------------------------------------------------------
// Image-level generation
// ---------------------------------------------------------------------------

struct CounterfactualResult {
  std::vector<float> x;        // original, CHW
  std::vector<float> x_recon;  // decode(encode(x))
  std::vector<float> x_cf;     // counterfactual image
  std::vector<float> z1, z2;   // latent code of x (z2 reused for decoding)
  std::vector<float> h1, h1_cf;
  int y_src = -1, y_cf = -1;
  int cycle_label = -1;  // class of the re-encoded counterfactual
  double alpha = 0;
  double mse = 0, ssim = 0;
  double flow_drift = 0;  // |forward(inverse(h_cf)) - h_cf|_inf
  bool flow_drift_warning = false;
  std::size_t channels = 0, height = 0, width = 0;
};

// x_chw: one image, CHW, values in [0,1], dims matching the model config.
inline CounterfactualResult generate_counterfactual(
    Model& model, std::span<const float> x_chw, int y_cf,
    std::optional<double> margin = {}) {
  autograd::NoGradGuard no_grad;
  const AutoencoderConfig& ac = model.cfg.autoencoder;
  const std::size_t c = ac.channels, s = ac.image_size;
  if (x_chw.size() != c * s * s)
    throw ShapeError("generate_counterfactual: image size mismatch");

  CounterfactualResult res;
  res.channels = c;
  res.height = s;
  res.width = s;
  res.x.assign(x_chw.begin(), x_chw.end());
  res.y_cf = y_cf;

  Tensor<float> x = Tensor<float>::from_vec(
      {1, c, s, s}, std::vector<float>(x_chw.begin(), x_chw.end()));
  LatentCode<float> code = model.encoder.encode(x, false);
  FlowResult<float> fr = model.flow.forward(code.z1);
  res.z1.assign(code.z1.data().begin(), code.z1.data().end());
  res.z2.assign(code.z2.data().begin(), code.z2.data().end());
  res.h1.assign(fr.h.data().begin(), fr.h.data().end());
  res.y_src = model.gmm.nearest_mean(res.h1);

  HiddenCrossing<float> crossing =
      counterfactual_hidden<float>(res.h1, y_cf, model.gmm, margin);
  res.h1_cf = crossing.h_cf;
  res.alpha = crossing.alpha;

  Tensor<float> h_cf = Tensor<float>::from_vec(
      {1, model.cfg.flow.dim}, std::vector<float>(res.h1_cf));
  Tensor<float> z1_cf = model.flow.inverse(h_cf);

  // the inversion drift check: forward(inverse(h_cf)) vs h_cf
  FlowResult<float> back = model.flow.forward(z1_cf);
  for (std::size_t i = 0; i < res.h1_cf.size(); ++i)
    res.flow_drift = std::max(
        res.flow_drift,
        double(std::abs(back.h.data()[i] - res.h1_cf[i])));
  res.flow_drift_warning = res.flow_drift > 1e-3;

  // decode with the original z2, bit for bit
  Tensor<float> x_cf = model.decoder.decode({z1_cf, code.z2}, false);
  Tensor<float> x_recon = model.decoder.decode({code.z1, code.z2}, false);
  res.x_cf.assign(x_cf.data().begin(), x_cf.data().end());
  res.x_recon.assign(x_recon.data().begin(), x_recon.data().end());

  // metrics + cycle classification
  res.mse = mse_metric<float>(res.x, res.x_cf);
  res.ssim = ssim_metric<float>(res.x, res.x_cf, c, s, s);
  LatentCode<float> cf_code = model.encoder.encode(x_cf, false);
  FlowResult<float> cf_fr = model.flow.forward(cf_code.z1);
  res.cycle_label = model.gmm.nearest_mean_batch(cf_fr.h)[0];
  return res;
}

// ---------------------------------------------------------------------------
// Counterfactual loss (Eq.-style score: classifier term + distance term)
// ---------------------------------------------------------------------------

enum class CfDistance { kMse, kOneMinusSsim };

struct CfLoss {
  double total = 0;
  double f_term = 0;  // cross-entropy of the re-encoded counterfactual
  double s_term = 0;  // image distance
};

inline CfLoss cf_loss(Model& model, std::span<const float> x,
                      std::span<const float> x_cf, int y_cf,
                      CfDistance distance) {
  autograd::NoGradGuard no_grad;
  const AutoencoderConfig& ac = model.cfg.autoencoder;
  const std::size_t c = ac.channels, s = ac.image_size;
  if (x.size() != c * s * s || x_cf.size() != x.size())
    throw ShapeError("cf_loss: image size mismatch");
  if (y_cf < 0 || std::size_t(y_cf) >= model.cfg.num_classes)
    throw ValueError("cf_loss: target class out of range");

  Tensor<float> xt = Tensor<float>::from_vec(
      {1, c, s, s}, std::vector<float>(x_cf.begin(), x_cf.end()));
  LatentCode<float> code = model.encoder.encode(xt, false);
  FlowResult<float> fr = model.flow.forward(code.z1);
  std::vector<float> h(fr.h.data().begin(), fr.h.data().end());
  std::vector<float> probs = model.gmm.posterior(h);
  const double p = std::max(double(probs[std::size_t(y_cf)]), 1e-300);

  CfLoss out;
  out.f_term = -std::log(p);
  out.s_term = distance == CfDistance::kMse
                   ? mse_metric<float>(x, x_cf)
                   : 1.0 - ssim_metric<float>(x, x_cf, c, s, s);
  out.total = out.f_term + out.s_term;
  return out;
}

}  // namespace flowcf
