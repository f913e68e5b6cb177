#pragma once

// Dataset handling: the packed on-disk format, preprocessing/augmentation,
// stratified splits, and a procedural generator of six morphology classes
// that trains end-to-end on a CPU in minutes.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flowcf/error.hpp"
#include "flowcf/rng.hpp"

namespace flowcf {

struct Dataset {
  std::size_t n = 0, height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // n * H * W * C, HWC per sample
  std::vector<std::uint8_t> labels;  // n entries, < num_classes
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t sample_bytes() const { return height * width * channels; }

  const std::uint8_t* sample(std::size_t i) const {
    return pixels.data() + i * sample_bytes();
  }

  // Per-class sample counts.
  std::vector<std::size_t> class_counts() const;

  // Enforces the in-memory invariants (sizes consistent, labels in range).
  void validate() const;
};

struct SynthConfig {
  std::size_t image_size = 64;
  std::size_t samples_per_class = 500;
  double noise = 0.05;
  std::uint64_t seed = 1;

  void validate() const {
    if (image_size < 32)
      throw ValueError("SynthConfig: image_size must be >= 32");
    if (noise < 0.0 || noise > 0.2)
      throw ValueError("SynthConfig: noise must lie in [0, 0.2]");
    if (samples_per_class == 0)
      throw ValueError("SynthConfig: samples_per_class must be >= 1");
  }

  static const std::vector<std::string>& class_names();
};

// ---------------------------------------------------------------------------
// Procedural renderers (float intensity buffers in [0,1], size*size).
// Exposed so tests can draw matched pairs with identical pose parameters.
// ---------------------------------------------------------------------------

namespace synth {

struct Pose {
  double angle = 0.0;   // global orientation, radians
  double cx = 0.0, cy = 0.0;  // center in pixels (sub-pixel jitter included)
};

void render_round_smooth(std::size_t size, const Pose& pose, double sigma,
                         double amp, std::vector<float>& out);
void render_cigar(std::size_t size, const Pose& pose, double sigma_major,
                  double axis_ratio, double amp, std::vector<float>& out);
void render_edge_on(std::size_t size, const Pose& pose, double half_len,
                    double width, double amp, bool bulge, double bulge_sigma,
                    double bulge_amp, std::vector<float>& out);
void render_barred_spiral(std::size_t size, const Pose& pose, double bar_len,
                          double bar_width, double arm_radius,
                          double arm_sweep, double amp,
                          std::vector<float>& out);
void render_merging(std::size_t size, const Pose& pose, double separation,
                    double sigma_a, double sigma_b, double bridge_amp,
                    double amp, std::vector<float>& out);

}  // namespace synth

// Deterministic under a fixed seed; renders on black background with
// Gaussian pixel noise and a per-sample warm color tint.
Dataset synth_generate(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Packed on-disk format:
//   magic "FCD1" | u32 LE header length | UTF-8 text header
//   | raw u8 pixels (n*H*W*C) | raw u8 labels (n)
// ---------------------------------------------------------------------------

void save_packed(const Dataset& dataset, const std::string& path);
Dataset load_packed(const std::string& path);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Fixed-angle core of the augmentation pipeline: normalize u8 -> [0,1],
// rotate (bilinear, reflect padding), center-crop the largest inscribed
// square free of rotation voids, resize to out_size. Returns CHW floats.
std::vector<float> preprocess_with_angle(const std::uint8_t* raw,
                                         std::size_t h, std::size_t w,
                                         std::size_t c, std::size_t out_size,
                                         double angle);

// Random-rotation augmentation (uniform angle).
std::vector<float> preprocess(const std::uint8_t* raw, std::size_t h,
                              std::size_t w, std::size_t c,
                              std::size_t out_size, Rng& rng);

// Plain normalize + bilinear resize (evaluation path, no augmentation).
std::vector<float> to_float_chw(const std::uint8_t* raw, std::size_t h,
                                std::size_t w, std::size_t c,
                                std::size_t out_size);

// General bilinear resize on planar CHW float data (half-pixel centers).
std::vector<float> resize_bilinear_chw(const float* src, std::size_t c,
                                       std::size_t h, std::size_t w,
                                       std::size_t oh, std::size_t ow);

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitResult {
  Dataset train, val, test;
};

// Per-class seeded shuffle followed by a proportional cut. Ratios must sum
// to 1 (within 1e-9).
SplitResult stratified_split(const Dataset& dataset,
                             const std::array<double, 3>& ratios,
                             std::uint64_t seed);

// Nearest-centroid pixel classifier: the sanity baseline a trained model
// must beat.
double nearest_centroid_accuracy(const Dataset& train, const Dataset& test);

}  // namespace flowcf
