#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "flowcf/train.hpp"

namespace flowcf {

namespace {

constexpr char kMagic[4] = {'F', 'C', 'F', '1'};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string shape_csv(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::string cur;
  for (char ch : text + "x") {
    if (ch == 'x') {
      if (cur.empty()) throw FormatError("checkpoint: malformed shape");
      shape.push_back(std::stoull(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return shape;
}

void emit_model_config(std::ostringstream& os, const ModelConfig& m) {
  const AutoencoderConfig& a = m.autoencoder;
  os << "[model]\n"
     << "image_size = " << a.image_size << "\n"
     << "channels = " << a.channels << "\n"
     << "base_filters = " << a.base_filters << "\n"
     << "max_filters = " << a.max_filters << "\n"
     << "stages = " << a.stages << "\n"
     << "latent_dim = " << a.latent_dim << "\n"
     << "z1_dim = " << a.z1_dim << "\n"
     << "resblocks_per_stage = " << a.resblocks_per_stage << "\n"
     << "upsample = "
     << (a.upsample == UpsampleMode::kBilinear ? "bilinear" : "nearest")
     << "\n"
     << "num_classes = " << m.num_classes << "\n"
     << "gmm_init_scale = " << fmt_double(m.gmm_init_scale) << "\n"
     << "feature_seed = " << m.feature_seed << "\n"
     << "[flow]\n"
     << "dim = " << m.flow.dim << "\n"
     << "blocks = " << m.flow.blocks << "\n"
     << "hidden = " << m.flow.hidden << "\n"
     << "clamp = " << fmt_double(m.flow.clamp) << "\n"
     << "leaky_slope = " << fmt_double(m.flow.leaky_slope) << "\n"
     << "last_layer_gain = " << fmt_double(m.flow.last_layer_gain) << "\n";
}

void emit_train_config(std::ostringstream& os, const TrainConfig& t) {
  os << "[train]\n"
     << "learning_rate = " << fmt_double(t.learning_rate) << "\n"
     << "gamma = " << fmt_double(t.gamma) << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "epochs = " << t.epochs << "\n"
     << "split_train = " << fmt_double(t.split_ratios[0]) << "\n"
     << "split_val = " << fmt_double(t.split_ratios[1]) << "\n"
     << "split_test = " << fmt_double(t.split_ratios[2]) << "\n"
     << "seed = " << t.seed << "\n"
     << "clip_norm = " << fmt_double(t.clip_norm) << "\n"
     << "augment = " << (t.augment ? 1 : 0) << "\n"
     << "beta = " << fmt_double(t.loss.beta) << "\n"
     << "rbf_sigma = " << fmt_double(t.loss.rbf_sigma) << "\n"
     << "mmd_multiscale = " << (t.loss.mmd_multiscale ? 1 : 0) << "\n"
     << "weight_recon = " << fmt_double(t.loss.weight_recon) << "\n"
     << "weight_mmd = " << fmt_double(t.loss.weight_mmd) << "\n"
     << "weight_ib = " << fmt_double(t.loss.weight_ib) << "\n"
     << "recon_mode = "
     << (t.loss.recon_mode == ReconMode::kPixel ? "pixel" : "random-feature")
     << "\n";
}

struct KeyValues {
  std::map<std::string, std::string> kv;

  const std::string& get(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end())
      throw FormatError("checkpoint: missing header key '" + key + "'");
    return it->second;
  }
  std::size_t get_u(const std::string& key) const {
    try {
      return std::stoull(get(key));
    } catch (const std::logic_error&) {
      throw FormatError("checkpoint: malformed integer for '" + key + "'");
    }
  }
  double get_d(const std::string& key) const {
    try {
      return std::stod(get(key));
    } catch (const std::logic_error&) {
      throw FormatError("checkpoint: malformed real for '" + key + "'");
    }
  }
};

struct ManifestEntry {
  std::string name;
  std::string dtype;
  Shape shape;
  std::size_t offset = 0, bytes = 0;
};

}  // namespace

void check_model_compatible(const ModelConfig& a, const ModelConfig& b) {
  auto fail = [](const std::string& what) {
    throw ValueError("checkpoint incompatible with run configuration: " +
                     what);
  };
  if (a.autoencoder.image_size != b.autoencoder.image_size)
    fail("image_size differs");
  if (a.autoencoder.channels != b.autoencoder.channels)
    fail("channels differs");
  if (a.autoencoder.base_filters != b.autoencoder.base_filters ||
      a.autoencoder.max_filters != b.autoencoder.max_filters ||
      a.autoencoder.stages != b.autoencoder.stages ||
      a.autoencoder.resblocks_per_stage != b.autoencoder.resblocks_per_stage)
    fail("encoder/decoder architecture differs");
  if (a.autoencoder.latent_dim != b.autoencoder.latent_dim)
    fail("latent_dim differs");
  if (a.autoencoder.z1_dim != b.autoencoder.z1_dim) fail("z1_dim differs");
  if (a.flow.dim != b.flow.dim || a.flow.blocks != b.flow.blocks ||
      a.flow.hidden != b.flow.hidden)
    fail("flow architecture differs");
  if (a.num_classes != b.num_classes) fail("num_classes differs");
}

void save_checkpoint(const std::string& path, Model& model, Adam& adam,
                     const CheckpointMeta& meta) {
  ParamList<float> params = model.params();

  // manifest: model tensors first, then optimizer moments per trainable
  std::vector<std::pair<std::string, std::span<const float>>> tensors;
  for (auto& p : params) tensors.push_back({p.name, p.tensor.data()});
  std::size_t slot = 0;
  for (auto& p : params) {
    if (!p.trainable) continue;
    tensors.push_back({"adam.m." + p.name, adam.first_moments()[slot]});
    tensors.push_back({"adam.v." + p.name, adam.second_moments()[slot]});
    ++slot;
  }

  std::map<std::string, Shape> shapes;
  for (auto& p : params) shapes[p.name] = p.tensor.shape();

  std::ostringstream header;
  emit_model_config(header, meta.model);
  emit_train_config(header, meta.train);
  header << "[state]\n"
         << "epoch = " << meta.epoch << "\n"
         << "best_val_accuracy = " << fmt_double(meta.best_val_accuracy)
         << "\n"
         << "adam_steps = " << adam.steps() << "\n"
         << "rng = " << meta.rng_state << "\n"
         << "[manifest]\n";
  std::size_t offset = 0;
  for (auto& [name, data] : tensors) {
    Shape shape = shapes.count(name) ? shapes[name] : Shape{data.size()};
    const std::size_t bytes = data.size() * sizeof(float);
    header << "tensor = " << name << " f32 " << shape_csv(shape) << " "
           << offset << " " << bytes << "\n";
    offset += bytes;
  }
  const std::string h = header.str();

  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw IoError("save_checkpoint: cannot open '" + path + "' for write");
  f.write(kMagic, 4);
  const std::uint32_t len = static_cast<std::uint32_t>(h.size());
  const unsigned char lenb[4] = {
      static_cast<unsigned char>(len & 0xff),
      static_cast<unsigned char>((len >> 8) & 0xff),
      static_cast<unsigned char>((len >> 16) & 0xff),
      static_cast<unsigned char>((len >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(lenb), 4);
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (auto& [name, data] : tensors)
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!f) throw IoError("save_checkpoint: write to '" + path + "' failed");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("load_checkpoint: bad magic (expected FCF1)");
  unsigned char lenb[4];
  if (!f.read(reinterpret_cast<char*>(lenb), 4))
    throw FormatError("load_checkpoint: truncated header length");
  const std::uint32_t len = std::uint32_t(lenb[0]) |
                            (std::uint32_t(lenb[1]) << 8) |
                            (std::uint32_t(lenb[2]) << 16) |
                            (std::uint32_t(lenb[3]) << 24);
  if (len > (1u << 24))
    throw FormatError("load_checkpoint: unreasonable header length");
  std::string header(len, '\0');
  if (!f.read(header.data(), len))
    throw FormatError("load_checkpoint: truncated header");

  KeyValues model_kv, flow_kv, train_kv, state_kv;
  std::vector<ManifestEntry> manifest;
  {
    std::istringstream hs(header);
    std::string line, section;
    while (std::getline(hs, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (line.front() == '[') {
        section = line;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw FormatError("load_checkpoint: malformed header line '" + line +
                          "'");
      auto trim = [](std::string v) {
        const auto b = v.find_first_not_of(" \t");
        const auto e = v.find_last_not_of(" \t");
        return b == std::string::npos ? std::string()
                                      : v.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (section == "[manifest]") {
        if (key != "tensor")
          throw FormatError("load_checkpoint: unexpected manifest key '" +
                            key + "'");
        std::istringstream vs(val);
        ManifestEntry e;
        std::string shape_text;
        if (!(vs >> e.name >> e.dtype >> shape_text >> e.offset >> e.bytes))
          throw FormatError("load_checkpoint: malformed manifest entry");
        if (e.dtype != "f32")
          throw FormatError("load_checkpoint: unsupported dtype '" + e.dtype +
                            "'");
        e.shape = parse_shape(shape_text);
        manifest.push_back(std::move(e));
      } else if (section == "[model]") {
        model_kv.kv[key] = val;
      } else if (section == "[flow]") {
        flow_kv.kv[key] = val;
      } else if (section == "[train]") {
        train_kv.kv[key] = val;
      } else if (section == "[state]") {
        state_kv.kv[key] = val;
      } else {
        throw FormatError("load_checkpoint: unknown section '" + section +
                          "'");
      }
    }
  }

  // manifest sanity: contiguous, non-overlapping, shape-consistent
  std::size_t expect_offset = 0;
  for (const auto& e : manifest) {
    if (e.offset != expect_offset)
      throw FormatError("load_checkpoint: manifest offsets overlap or leave "
                        "gaps at tensor '" + e.name + "'");
    if (shape_numel(e.shape) * sizeof(float) != e.bytes)
      throw FormatError("load_checkpoint: manifest shape disagrees with byte "
                        "length for tensor '" + e.name + "'");
    expect_offset += e.bytes;
  }

  LoadedCheckpoint out;
  ModelConfig& mc = out.meta.model;
  mc.autoencoder.image_size = model_kv.get_u("image_size");
  mc.autoencoder.channels = model_kv.get_u("channels");
  mc.autoencoder.base_filters = model_kv.get_u("base_filters");
  mc.autoencoder.max_filters = model_kv.get_u("max_filters");
  mc.autoencoder.stages = model_kv.get_u("stages");
  mc.autoencoder.latent_dim = model_kv.get_u("latent_dim");
  mc.autoencoder.z1_dim = model_kv.get_u("z1_dim");
  mc.autoencoder.resblocks_per_stage =
      model_kv.get_u("resblocks_per_stage");
  mc.autoencoder.upsample = model_kv.get("upsample") == "nearest"
                                ? UpsampleMode::kNearest
                                : UpsampleMode::kBilinear;
  mc.num_classes = model_kv.get_u("num_classes");
  mc.gmm_init_scale = model_kv.get_d("gmm_init_scale");
  mc.feature_seed = model_kv.get_u("feature_seed");
  mc.flow.dim = flow_kv.get_u("dim");
  mc.flow.blocks = flow_kv.get_u("blocks");
  mc.flow.hidden = flow_kv.get_u("hidden");
  mc.flow.clamp = flow_kv.get_d("clamp");
  mc.flow.leaky_slope = flow_kv.get_d("leaky_slope");
  mc.flow.last_layer_gain = flow_kv.get_d("last_layer_gain");

  TrainConfig& tc = out.meta.train;
  tc.learning_rate = train_kv.get_d("learning_rate");
  tc.gamma = train_kv.get_d("gamma");
  tc.batch_size = train_kv.get_u("batch_size");
  tc.epochs = train_kv.get_u("epochs");
  tc.split_ratios = {train_kv.get_d("split_train"),
                     train_kv.get_d("split_val"),
                     train_kv.get_d("split_test")};
  tc.seed = train_kv.get_u("seed");
  tc.clip_norm = train_kv.get_d("clip_norm");
  tc.augment = train_kv.get_u("augment") != 0;
  tc.loss.beta = train_kv.get_d("beta");
  tc.loss.rbf_sigma = train_kv.get_d("rbf_sigma");
  tc.loss.mmd_multiscale = train_kv.get_u("mmd_multiscale") != 0;
  tc.loss.weight_recon = train_kv.get_d("weight_recon");
  tc.loss.weight_mmd = train_kv.get_d("weight_mmd");
  tc.loss.weight_ib = train_kv.get_d("weight_ib");
  tc.loss.recon_mode = train_kv.get("recon_mode") == "random-feature"
                           ? ReconMode::kRandomFeature
                           : ReconMode::kPixel;

  out.meta.epoch = state_kv.get_u("epoch");
  out.meta.best_val_accuracy = state_kv.get_d("best_val_accuracy");
  out.meta.rng_state = state_kv.get("rng");
  const std::size_t adam_steps = state_kv.get_u("adam_steps");

  // rebuild the model skeleton, then overwrite every tensor from payload
  out.model = Model(mc, /*seed=*/0);
  out.adam = Adam(out.model.params());
  out.adam.set_steps(adam_steps);

  ParamList<float> params = out.model.params();
  std::map<std::string, Tensor<float>*> by_name;
  for (auto& p : params) by_name[p.name] = &p.tensor;
  std::map<std::string, std::vector<float>*> moments;
  std::size_t slot = 0;
  for (auto& p : params) {
    if (!p.trainable) continue;
    moments["adam.m." + p.name] = &out.adam.first_moments()[slot];
    moments["adam.v." + p.name] = &out.adam.second_moments()[slot];
    ++slot;
  }

  std::size_t consumed = 0;
  for (const auto& e : manifest) {
    std::vector<float> buf(e.bytes / sizeof(float));
    if (!f.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(e.bytes)))
      throw FormatError("load_checkpoint: payload truncated at tensor '" +
                        e.name + "'");
    consumed++;
    if (auto it = by_name.find(e.name); it != by_name.end()) {
      if (it->second->shape() != e.shape)
        throw FormatError("load_checkpoint: shape mismatch for tensor '" +
                          e.name + "' (file " + shape_csv(e.shape) +
                          ", model " + shape_csv(it->second->shape()) + ")");
      auto dst = it->second->mutable_data();
      std::copy(buf.begin(), buf.end(), dst.begin());
      by_name.erase(it);
    } else if (auto mt = moments.find(e.name); mt != moments.end()) {
      if (mt->second->size() != buf.size())
        throw FormatError("load_checkpoint: moment size mismatch for '" +
                          e.name + "'");
      *mt->second = std::move(buf);
      moments.erase(mt);
    } else {
      throw FormatError("load_checkpoint: unexpected tensor '" + e.name +
                        "' in manifest");
    }
  }
  if (!by_name.empty())
    throw FormatError("load_checkpoint: tensor '" +
                      by_name.begin()->first + "' missing from file");
  if (!moments.empty())
    throw FormatError("load_checkpoint: optimizer moment '" +
                      moments.begin()->first + "' missing from file");
  char extra;
  if (f.read(&extra, 1))
    throw FormatError("load_checkpoint: trailing bytes after payload");
  return out;
}

}  // namespace flowcf
