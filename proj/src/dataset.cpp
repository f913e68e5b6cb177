#include "flowcf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace flowcf {

// ---------------------------------------------------------------------------
// Dataset basics
// ---------------------------------------------------------------------------

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes(), 0);
  for (std::uint8_t y : labels) counts.at(y)++;
  return counts;
}

void Dataset::validate() const {
  if (n == 0) throw ValueError("Dataset: empty");
  if (pixels.size() != n * sample_bytes())
    throw FormatError("Dataset: pixel payload size mismatch");
  if (labels.size() != n) throw FormatError("Dataset: label count mismatch");
  if (class_names.empty()) throw FormatError("Dataset: no class names");
  for (std::uint8_t y : labels)
    if (y >= num_classes())
      throw ValueError("Dataset: label " + std::to_string(int(y)) +
                       " out of range [0," + std::to_string(num_classes()) +
                       ")");
}

const std::vector<std::string>& SynthConfig::class_names() {
  static const std::vector<std::string> names = {
      "round-smooth",    "cigar",         "edge-on-bulge",
      "edge-on-no-bulge", "barred-spiral", "merging"};
  return names;
}

// ---------------------------------------------------------------------------
// Renderers
// ---------------------------------------------------------------------------

namespace synth {

namespace {

// Adds an anisotropic Gaussian blob rotated by `angle` at (cx, cy).
void add_gaussian(std::size_t size, double cx, double cy, double sx,
                  double sy, double angle, double amp,
                  std::vector<float>& out) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = double(x) - cx, dy = double(y) - cy;
      const double u = ca * dx + sa * dy;
      const double v = -sa * dx + ca * dy;
      const double e =
          std::exp(-0.5 * (u * u / (sx * sx) + v * v / (sy * sy)));
      out[y * size + x] += static_cast<float>(amp * e);
    }
  }
}

// Adds a soft-edged bar: Gaussian profile across the width, smooth rolloff
// at the ends.
void add_bar(std::size_t size, double cx, double cy, double half_len,
             double width, double angle, double amp, std::vector<float>& out) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = double(x) - cx, dy = double(y) - cy;
      const double along = ca * dx + sa * dy;
      const double perp = -sa * dx + ca * dy;
      const double end =
          1.0 /
          (1.0 + std::exp((std::abs(along) - half_len) / (0.15 * half_len)));
      const double profile = std::exp(-0.5 * perp * perp / (width * width));
      out[y * size + x] += static_cast<float>(amp * end * profile);
    }
  }
}

// Adds a circular arc of soft thickness, swept from angle0 by `sweep`.
void add_arc(std::size_t size, double cx, double cy, double radius,
             double angle0, double sweep, double thickness, double amp,
             std::vector<float>& out) {
  const int steps = std::max(16, int(radius * std::abs(sweep) * 2));
  for (int s = 0; s <= steps; ++s) {
    const double t = double(s) / steps;
    const double a = angle0 + t * sweep;
    const double px = cx + radius * std::cos(a);
    const double py = cy + radius * std::sin(a);
    const double fade = amp * (1.0 - 0.6 * t);  // arms dim outward
    const int r = int(std::ceil(3 * thickness));
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const int ix = int(std::floor(px)) + dx;
        const int iy = int(std::floor(py)) + dy;
        if (ix < 0 || iy < 0 || ix >= int(size) || iy >= int(size)) continue;
        const double ddx = double(ix) - px, ddy = double(iy) - py;
        const double d2 = ddx * ddx + ddy * ddy;
        const double e = std::exp(-0.5 * d2 / (thickness * thickness));
        float& px_out = out[std::size_t(iy) * size + std::size_t(ix)];
        // max-blend keeps overlapping arc segments from stacking up
        px_out = std::max(px_out, static_cast<float>(fade * e));
      }
    }
  }
}

}  // namespace

void render_round_smooth(std::size_t size, const Pose& pose, double sigma,
                         double amp, std::vector<float>& out) {
  out.assign(size * size, 0.f);
  add_gaussian(size, pose.cx, pose.cy, sigma, sigma, pose.angle, amp, out);
}

void render_cigar(std::size_t size, const Pose& pose, double sigma_major,
                  double axis_ratio, double amp, std::vector<float>& out) {
  out.assign(size * size, 0.f);
  add_gaussian(size, pose.cx, pose.cy, sigma_major, sigma_major / axis_ratio,
               pose.angle, amp, out);
}

void render_edge_on(std::size_t size, const Pose& pose, double half_len,
                    double width, double amp, bool bulge, double bulge_sigma,
                    double bulge_amp, std::vector<float>& out) {
  out.assign(size * size, 0.f);
  add_bar(size, pose.cx, pose.cy, half_len, width, pose.angle, amp, out);
  if (bulge)
    add_gaussian(size, pose.cx, pose.cy, bulge_sigma, bulge_sigma, 0.0,
                 bulge_amp, out);
}

void render_barred_spiral(std::size_t size, const Pose& pose, double bar_len,
                          double bar_width, double arm_radius,
                          double arm_sweep, double amp,
                          std::vector<float>& out) {
  out.assign(size * size, 0.f);
  add_gaussian(size, pose.cx, pose.cy, bar_width, bar_width, 0.0, amp, out);
  add_bar(size, pose.cx, pose.cy, bar_len, bar_width, pose.angle, 0.85 * amp,
          out);
  // Two arms leaving the bar ends on opposite sides (pi-rotational symmetry).
  const double t = 0.55 * amp;
  add_arc(size, pose.cx, pose.cy, arm_radius, pose.angle, arm_sweep,
          0.9 * bar_width, t, out);
  add_arc(size, pose.cx, pose.cy, arm_radius, pose.angle + 3.14159265358979,
          arm_sweep, 0.9 * bar_width, t, out);
}

void render_merging(std::size_t size, const Pose& pose, double separation,
                    double sigma_a, double sigma_b, double bridge_amp,
                    double amp, std::vector<float>& out) {
  out.assign(size * size, 0.f);
  const double ca = std::cos(pose.angle), sa = std::sin(pose.angle);
  const double ax = pose.cx - 0.5 * separation * ca;
  const double ay = pose.cy - 0.5 * separation * sa;
  const double bx = pose.cx + 0.5 * separation * ca;
  const double by = pose.cy + 0.5 * separation * sa;
  add_gaussian(size, ax, ay, sigma_a, sigma_a, 0.0, amp, out);
  add_gaussian(size, bx, by, sigma_b, sigma_b, 0.0, 0.85 * amp, out);
  // faint bridge between the cores
  add_bar(size, pose.cx, pose.cy, 0.5 * separation, 0.35 * sigma_a,
          pose.angle, bridge_amp, out);
}

}  // namespace synth

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

Dataset synth_generate(const SynthConfig& config) {
  config.validate();
  const std::size_t s = config.image_size;
  const double fs = static_cast<double>(s);
  const std::size_t k = SynthConfig::class_names().size();
  Rng rng(config.seed);

  Dataset ds;
  ds.height = ds.width = s;
  ds.channels = 3;
  ds.class_names = SynthConfig::class_names();
  ds.n = k * config.samples_per_class;
  ds.pixels.resize(ds.n * ds.sample_bytes());
  ds.labels.resize(ds.n);

  std::vector<float> intensity;
  std::size_t idx = 0;
  for (std::size_t cls = 0; cls < k; ++cls) {
    for (std::size_t i = 0; i < config.samples_per_class; ++i, ++idx) {
      synth::Pose pose;
      pose.angle = rng.uniform(0.0, 6.283185307179586);
      pose.cx = 0.5 * fs + rng.uniform(-0.5, 0.5);  // sub-pixel jitter
      pose.cy = 0.5 * fs + rng.uniform(-0.5, 0.5);
      const double amp = rng.uniform(0.75, 0.95);

      switch (cls) {
        case 0:
          synth::render_round_smooth(s, pose, fs * rng.uniform(0.10, 0.16),
                                     amp, intensity);
          break;
        case 1:
          synth::render_cigar(s, pose, fs * rng.uniform(0.16, 0.22),
                              rng.uniform(3.0, 5.0), amp, intensity);
          break;
        case 2:
          synth::render_edge_on(s, pose, fs * rng.uniform(0.28, 0.36),
                                fs * rng.uniform(0.022, 0.034), amp, true,
                                fs * rng.uniform(0.05, 0.07), 0.9 * amp,
                                intensity);
          break;
        case 3:
          synth::render_edge_on(s, pose, fs * rng.uniform(0.28, 0.36),
                                fs * rng.uniform(0.022, 0.034), amp, false,
                                0.0, 0.0, intensity);
          break;
        case 4:
          synth::render_barred_spiral(
              s, pose, fs * rng.uniform(0.13, 0.18),
              fs * rng.uniform(0.028, 0.040), fs * rng.uniform(0.20, 0.26),
              rng.uniform(1.8, 2.6), amp, intensity);
          break;
        default:
          synth::render_merging(s, pose, fs * rng.uniform(0.26, 0.38),
                                fs * rng.uniform(0.07, 0.10),
                                fs * rng.uniform(0.06, 0.09),
                                rng.uniform(0.15, 0.28), amp, intensity);
          break;
      }

      // warm color tint + pixel noise, clamped to [0,1], quantized to u8
      const double tint[3] = {rng.uniform(0.85, 1.0), rng.uniform(0.75, 0.95),
                              rng.uniform(0.60, 0.85)};
      std::uint8_t* dst = ds.pixels.data() + idx * ds.sample_bytes();
      for (std::size_t p = 0; p < s * s; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
          double v = double(intensity[p]) * tint[c] +
                     config.noise * rng.normal();
          v = std::clamp(v, 0.0, 1.0);
          dst[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
      ds.labels[idx] = static_cast<std::uint8_t>(cls);
    }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Packed format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'C', 'D', '1'};

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += ',';
    out += names[i];
  }
  return out;
}

std::vector<std::string> split_names(const std::string& joined) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : joined) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void save_packed(const Dataset& dataset, const std::string& path) {
  dataset.validate();
  std::ostringstream header;
  header << "n = " << dataset.n << "\n"
         << "height = " << dataset.height << "\n"
         << "width = " << dataset.width << "\n"
         << "channels = " << dataset.channels << "\n"
         << "class_names = " << join_names(dataset.class_names) << "\n";
  const std::string h = header.str();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_packed: cannot open '" + path + "' for write");
  f.write(kMagic, 4);
  const std::uint32_t len = static_cast<std::uint32_t>(h.size());
  const unsigned char lenb[4] = {static_cast<unsigned char>(len & 0xff),
                                 static_cast<unsigned char>((len >> 8) & 0xff),
                                 static_cast<unsigned char>((len >> 16) & 0xff),
                                 static_cast<unsigned char>((len >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(lenb), 4);
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  f.write(reinterpret_cast<const char*>(dataset.pixels.data()),
          static_cast<std::streamsize>(dataset.pixels.size()));
  f.write(reinterpret_cast<const char*>(dataset.labels.data()),
          static_cast<std::streamsize>(dataset.labels.size()));
  if (!f) throw IoError("save_packed: write to '" + path + "' failed");
}

Dataset load_packed(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_packed: cannot open '" + path + "'");
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("load_packed: bad magic (expected FCD1)");
  unsigned char lenb[4];
  if (!f.read(reinterpret_cast<char*>(lenb), 4))
    throw FormatError("load_packed: truncated header length");
  const std::uint32_t len = std::uint32_t(lenb[0]) |
                            (std::uint32_t(lenb[1]) << 8) |
                            (std::uint32_t(lenb[2]) << 16) |
                            (std::uint32_t(lenb[3]) << 24);
  if (len > (1u << 20))
    throw FormatError("load_packed: unreasonable header length");
  std::string header(len, '\0');
  if (!f.read(header.data(), len))
    throw FormatError("load_packed: truncated header");

  Dataset ds;
  std::istringstream hs(header);
  std::string line;
  while (std::getline(hs, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t");
      const auto e = v.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "n") ds.n = std::stoull(val);
      else if (key == "height") ds.height = std::stoull(val);
      else if (key == "width") ds.width = std::stoull(val);
      else if (key == "channels") ds.channels = std::stoull(val);
      else if (key == "class_names") ds.class_names = split_names(val);
      else throw FormatError("load_packed: unknown header key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw FormatError("load_packed: malformed value for '" + key + "'");
    } catch (const std::out_of_range&) {
      throw FormatError("load_packed: out-of-range value for '" + key + "'");
    }
  }
  if (ds.n == 0 || ds.height == 0 || ds.width == 0 || ds.channels == 0 ||
      ds.class_names.empty())
    throw FormatError("load_packed: incomplete header");

  ds.pixels.resize(ds.n * ds.sample_bytes());
  if (!f.read(reinterpret_cast<char*>(ds.pixels.data()),
              static_cast<std::streamsize>(ds.pixels.size())))
    throw FormatError("load_packed: pixel payload shorter than header claims");
  ds.labels.resize(ds.n);
  if (!f.read(reinterpret_cast<char*>(ds.labels.data()),
              static_cast<std::streamsize>(ds.labels.size())))
    throw FormatError("load_packed: label payload shorter than header claims");
  char extra;
  if (f.read(&extra, 1))
    throw FormatError("load_packed: trailing bytes after payload");
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

namespace {

// Reflect index into [0, n-1] (boundary-symmetric).
inline std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

inline float bilinear_reflect(const float* plane, std::size_t h,
                              std::size_t w, double y, double x) {
  const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(std::floor(y));
  const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(std::floor(x));
  const double fy = y - double(y0), fx = x - double(x0);
  const std::ptrdiff_t ya = reflect(y0, std::ptrdiff_t(h));
  const std::ptrdiff_t yb = reflect(y0 + 1, std::ptrdiff_t(h));
  const std::ptrdiff_t xa = reflect(x0, std::ptrdiff_t(w));
  const std::ptrdiff_t xb = reflect(x0 + 1, std::ptrdiff_t(w));
  const double top = plane[ya * w + xa] * (1 - fx) + plane[ya * w + xb] * fx;
  const double bot = plane[yb * w + xa] * (1 - fx) + plane[yb * w + xb] * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

}  // namespace

std::vector<float> resize_bilinear_chw(const float* src, std::size_t c,
                                       std::size_t h, std::size_t w,
                                       std::size_t oh, std::size_t ow) {
  std::vector<float> out(c * oh * ow);
  const double sy = double(h) / double(oh), sx = double(w) / double(ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* plane = src + ch * h * w;
    float* dst = out.data() + ch * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(h - 1));
      for (std::size_t x = 0; x < ow; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(w - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t x0 = static_cast<std::size_t>(fx);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double wy = fy - double(y0), wx = fx - double(x0);
        const double top =
            plane[y0 * w + x0] * (1 - wx) + plane[y0 * w + x1] * wx;
        const double bot =
            plane[y1 * w + x0] * (1 - wx) + plane[y1 * w + x1] * wx;
        dst[y * ow + x] = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

std::vector<float> preprocess_with_angle(const std::uint8_t* raw,
                                         std::size_t h, std::size_t w,
                                         std::size_t c, std::size_t out_size,
                                         double angle) {
  // u8 HWC -> float CHW in [0,1]
  std::vector<float> img(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        img[ch * h * w + y * w + x] =
            static_cast<float>(raw[(y * w + x) * c + ch]) / 255.0f;

  std::vector<float> rotated;
  const float* stage = img.data();
  if (angle != 0.0) {
    rotated.resize(c * h * w);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double cy = 0.5 * double(h - 1), cx = 0.5 * double(w - 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* plane = img.data() + ch * h * w;
      float* dst = rotated.data() + ch * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = double(y) - cy, dx = double(x) - cx;
          // inverse rotation: sample where this output pixel came from
          const double syc = -sa * dx + ca * dy + cy;
          const double sxc = ca * dx + sa * dy + cx;
          dst[y * w + x] = bilinear_reflect(plane, h, w, syc, sxc);
        }
      }
    }
    stage = rotated.data();
  }

  // Largest axis-aligned square whose content is void-free after rotation.
  const double denom = std::abs(std::cos(angle)) + std::abs(std::sin(angle));
  const std::size_t side = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::floor(double(std::min(h, w)) / std::max(denom, 1.0))));
  const std::size_t oy = (h - side) / 2, ox = (w - side) / 2;
  std::vector<float> cropped(c * side * side);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        cropped[ch * side * side + y * side + x] =
            stage[ch * h * w + (oy + y) * w + (ox + x)];

  if (side == out_size) return cropped;
  return resize_bilinear_chw(cropped.data(), c, side, side, out_size,
                             out_size);
}

std::vector<float> preprocess(const std::uint8_t* raw, std::size_t h,
                              std::size_t w, std::size_t c,
                              std::size_t out_size, Rng& rng) {
  return preprocess_with_angle(raw, h, w, c, out_size,
                               rng.uniform(0.0, 6.283185307179586));
}

std::vector<float> to_float_chw(const std::uint8_t* raw, std::size_t h,
                                std::size_t w, std::size_t c,
                                std::size_t out_size) {
  return preprocess_with_angle(raw, h, w, c, out_size, 0.0);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

namespace {

Dataset subset(const Dataset& src, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.height = src.height;
  out.width = src.width;
  out.channels = src.channels;
  out.class_names = src.class_names;
  out.n = indices.size();
  out.pixels.resize(out.n * out.sample_bytes());
  out.labels.resize(out.n);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::memcpy(out.pixels.data() + i * out.sample_bytes(),
                src.sample(indices[i]), src.sample_bytes());
    out.labels[i] = src.labels[indices[i]];
  }
  return out;
}

}  // namespace

SplitResult stratified_split(const Dataset& dataset,
                             const std::array<double, 3>& ratios,
                             std::uint64_t seed) {
  dataset.validate();
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9)
    throw ValueError("stratified_split: ratios must sum to 1");

  Rng rng(seed);
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  for (std::size_t cls = 0; cls < dataset.num_classes(); ++cls) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.n; ++i)
      if (dataset.labels[i] == cls) idx.push_back(i);
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(ratios[0] * static_cast<double>(n)));
    std::size_t n_val = static_cast<std::size_t>(
        std::llround(ratios[1] * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train) train_idx.push_back(idx[i]);
      else if (i < n_train + n_val) val_idx.push_back(idx[i]);
      else test_idx.push_back(idx[i]);
    }
  }
  // Within-split order independent of class interleaving.
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  return {subset(dataset, train_idx), subset(dataset, val_idx),
          subset(dataset, test_idx)};
}

double nearest_centroid_accuracy(const Dataset& train, const Dataset& test) {
  train.validate();
  test.validate();
  const std::size_t k = train.num_classes();
  const std::size_t bytes = train.sample_bytes();
  std::vector<std::vector<double>> centroids(k, std::vector<double>(bytes, 0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < train.n; ++i) {
    auto& c = centroids[train.labels[i]];
    const std::uint8_t* px = train.sample(i);
    for (std::size_t b = 0; b < bytes; ++b) c[b] += px[b] / 255.0;
    counts[train.labels[i]]++;
  }
  for (std::size_t y = 0; y < k; ++y)
    if (counts[y] > 0)
      for (double& v : centroids[y]) v /= static_cast<double>(counts[y]);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.n; ++i) {
    const std::uint8_t* px = test.sample(i);
    double best = 0;
    int best_y = -1;
    for (std::size_t y = 0; y < k; ++y) {
      double d = 0;
      for (std::size_t b = 0; b < bytes; ++b) {
        const double diff = px[b] / 255.0 - centroids[y][b];
        d += diff * diff;
      }
      if (best_y < 0 || d < best) {
        best = d;
        best_y = static_cast<int>(y);
      }
    }
    if (best_y == test.labels[i]) correct++;
  }
  return static_cast<double>(correct) / static_cast<double>(test.n);
}

}  // namespace flowcf
