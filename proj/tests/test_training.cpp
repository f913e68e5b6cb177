#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flowcf/train.hpp"

using namespace flowcf;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.autoencoder.image_size = 32;
  mc.autoencoder.channels = 3;
  mc.autoencoder.base_filters = 2;
  mc.autoencoder.stages = 2;
  mc.autoencoder.latent_dim = 8;
  mc.autoencoder.z1_dim = 6;
  mc.autoencoder.resblocks_per_stage = 1;
  mc.flow.dim = 6;
  mc.flow.blocks = 2;
  mc.flow.hidden = 8;
  mc.num_classes = 6;
  return mc;
}

Dataset tiny_dataset(std::size_t per_class = 4, std::uint64_t seed = 3) {
  SynthConfig cfg;
  cfg.image_size = 32;
  cfg.samples_per_class = per_class;
  cfg.seed = seed;
  return synth_generate(cfg);
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig paper = TrainConfig::paper_preset();
  CHECK(paper.learning_rate == 1e-4);
  CHECK(paper.gamma == 0.99);
  CHECK(paper.batch_size == 128);
  CHECK(paper.epochs == 100);
  CHECK(lr_at(0, paper) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(1, paper) == doctest::Approx(9.9e-5).epsilon(1e-12));
  CHECK(lr_at(100, paper) == doctest::Approx(3.66032341e-5).epsilon(1e-6));
}

TEST_CASE("adam: bias-corrected first step and degenerate cases") {
  // single scalar parameter, gradient 1, lr 1e-3:
  // m_hat = 1, v_hat = 1  =>  delta = -lr / (sqrt(1) + eps)
  auto w = Tensor<float>::from_vec({1}, {0.5f}, true);
  ParamList<float> params{{"w", w, true}};
  Adam adam(params);

  w.grad_accum()[0] = 1.0f;
  adam.step(params, 1e-3);
  const double expect_delta = -1e-3 / (1.0 + 1e-8);
  CHECK(w.data()[0] == doctest::Approx(0.5 + expect_delta).epsilon(1e-6));

  SUBCASE("zero gradients leave parameters unchanged") {
    const float before = w.data()[0];
    w.zero_grad();
    w.grad_accum()[0] = 0.0f;
    adam.step(params, 1e-3);
    // moments decay but the update is exactly zero only when m was zero;
    // here m is nonzero from the first step, so instead verify the zero-grad
    // case from a fresh state
    auto w2 = Tensor<float>::from_vec({1}, {0.25f}, true);
    ParamList<float> p2{{"w2", w2, true}};
    Adam a2(p2);
    w2.grad_accum()[0] = 0.0f;
    a2.step(p2, 1e-3);
    CHECK(w2.data()[0] == 0.25f);  // bitwise unchanged
    (void)before;
  }

  SUBCASE("identical states step identically") {
    auto a = Tensor<float>::from_vec({2}, {1.f, -2.f}, true);
    auto b = Tensor<float>::from_vec({2}, {1.f, -2.f}, true);
    ParamList<float> pa{{"p", a, true}}, pb{{"p", b, true}};
    Adam oa(pa), ob(pb);
    for (int i = 0; i < 3; ++i) {
      a.zero_grad();
      b.zero_grad();
      auto ga = a.grad_accum();
      auto gb = b.grad_accum();
      ga[0] = gb[0] = 0.3f + float(i);
      ga[1] = gb[1] = -1.1f;
      oa.step(pa, 3e-3);
      ob.step(pb, 3e-3);
    }
    CHECK(a.data()[0] == b.data()[0]);
    CHECK(a.data()[1] == b.data()[1]);
  }

  SUBCASE("non-finite gradients name the parameter") {
    auto bad = Tensor<float>::from_vec({1}, {0.f}, true);
    ParamList<float> pb{{"enc.w", bad, true}};
    Adam ab(pb);
    bad.grad_accum()[0] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_WITH_AS(ab.step(pb, 1e-3), doctest::Contains("enc.w"),
                         ValueError);
  }
}

TEST_CASE("one epoch over two batches runs exactly two optimizer steps") {
  // 4 samples/class: per-class split 3/1/0, so train n = 18, batch 9 -> 2
  Dataset ds = tiny_dataset(4);
  Model model(tiny_model_config(), 7);
  Adam adam(model.params());
  TrainConfig tc;
  tc.batch_size = 9;
  tc.epochs = 1;
  tc.seed = 5;
  Rng rng(tc.seed);
  TrainResult res = train(model, adam, ds, tc, rng);
  CHECK(res.optimizer_steps == 2);
  CHECK(res.history.size() == 1);
  CHECK(std::isfinite(res.history[0].train_total));
  CHECK(std::isfinite(res.history[0].val_total));
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
  Dataset ds = tiny_dataset(4);
  TrainConfig tc;
  tc.batch_size = 6;
  tc.epochs = 2;
  tc.seed = 11;

  auto run = [&]() {
    Model model(tiny_model_config(), 42);
    Adam adam(model.params());
    Rng rng(tc.seed);
    train(model, adam, ds, tc, rng);
    std::vector<float> flat;
    for (auto& p : model.params())
      flat.insert(flat.end(), p.tensor.data().begin(), p.tensor.data().end());
    return flat;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}

TEST_CASE("loss stays finite and metrics rows match epochs") {
  Dataset ds = tiny_dataset(6);
  Model model(tiny_model_config(), 1);
  Adam adam(model.params());
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 3;
  tc.seed = 2;
  Rng rng(tc.seed);
  std::vector<EpochMetrics> seen;
  TrainResult res = train(model, adam, ds, tc, rng, 0,
                          [&](const EpochMetrics& m) { seen.push_back(m); });
  CHECK(res.history.size() == 3);
  CHECK(seen.size() == 3);
  for (const auto& m : res.history) {
    CHECK(std::isfinite(m.train_total));
    CHECK(std::isfinite(m.val_total));
    CHECK(m.val_accuracy >= 0.0);
    CHECK(m.val_accuracy <= 1.0);
  }
  // csv row shape: header columns == row columns
  const std::string header = metrics_csv_header();
  const std::string row = metrics_csv_row(res.history[0]);
  CHECK(std::count(header.begin(), header.end(), ',') ==
        std::count(row.begin(), row.end(), ','));
}

TEST_CASE("ib term is structurally independent of z2") {
  Model model(tiny_model_config(), 3);
  Rng rng(5);
  auto x = Tensor<float>::uniform({4, 3, 32, 32}, rng, 0.f, 1.f);
  std::vector<int> labels{0, 1, 2, 3};

  Tensor<float> z = model.encoder.forward(x, true);
  auto [z1, z2] = split_cols(z, model.cfg.autoencoder.z1_dim);
  FlowResult<float> fr = model.flow.forward(z1);
  Tensor<float> x_rec = model.decoder.forward(z, true);
  Tensor<float> n = Tensor<float>::randn({z.dim(0), z.dim(1)}, rng);
  LossWeights w;
  auto lb = total_loss(x, x_rec, z, n, fr.h, fr.logdet, labels, model.gmm, w,
                       &model.extractor);

  CHECK(depends_on(lb.ib, z1));
  CHECK_FALSE(depends_on(lb.ib, z2));  // no path from z2 into the IB term
  CHECK(depends_on(lb.recon, z));      // the decoder sees the full latent
  CHECK(depends_on(lb.mmd, z));        // MMD runs on the full z
  // gradient of the IB term w.r.t. the z2 slice of a leaf latent is
  // structurally zero
  const std::size_t z1d = model.cfg.autoencoder.z1_dim;
  const std::size_t latent = model.cfg.autoencoder.latent_dim;
  auto z_leaf = Tensor<float>::randn({4, latent}, rng, 1.f, true);
  auto [zl1, zl2] = split_cols(z_leaf, z1d);
  FlowResult<float> fr2 = model.flow.forward(zl1);
  auto ib2 = ib_loss_batch(fr2.h, fr2.logdet, labels, model.gmm, w.beta);
  ib2.backward();
  auto gz = z_leaf.grad();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = z1d; j < latent; ++j)
      CHECK(gz[i * latent + j] == 0.0f);
    // ... while z1 columns do receive gradient somewhere
  }
  bool any_nonzero = false;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < z1d; ++j)
      any_nonzero = any_nonzero || gz[i * latent + j] != 0.0f;
  CHECK(any_nonzero);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  Model model(tiny_model_config(), 9);
  Adam adam(model.params());
  CheckpointMeta meta;
  meta.model = model.cfg;
  meta.train = TrainConfig{};
  meta.epoch = 4;
  meta.best_val_accuracy = 0.75;
  meta.rng_state = Rng(123).save_state();

  const std::string p1 = temp_path("fcf_rt1.bin");
  const std::string p2 = temp_path("fcf_rt2.bin");
  save_checkpoint(p1, model, adam, meta);
  LoadedCheckpoint lc = load_checkpoint(p1);
  save_checkpoint(p2, lc.model, lc.adam, lc.meta);
  CHECK(read_file(p1) == read_file(p2));

  // loaded tensors match bitwise
  auto pa = model.params();
  auto pb = lc.model.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    auto da = pa[i].tensor.data();
    auto db = pb[i].tensor.data();
    REQUIRE(da.size() == db.size());
    CHECK(std::equal(da.begin(), da.end(), db.begin()));
  }
  CHECK(lc.meta.epoch == 4);
  CHECK(lc.meta.best_val_accuracy == doctest::Approx(0.75));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint corruption produces structured errors, not crashes") {
  Model model(tiny_model_config(), 9);
  Adam adam(model.params());
  CheckpointMeta meta;
  meta.model = model.cfg;
  meta.rng_state = Rng(1).save_state();
  const std::string path = temp_path("fcf_corrupt.bin");
  save_checkpoint(path, model, adam, meta);

  SUBCASE("magic byte flipped") {
    auto bytes = read_file(path);
    bytes[1] = 'X';
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<char*>(bytes.data()),
               std::streamsize(bytes.size()));
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                         FormatError);
  }
  SUBCASE("payload truncated") {
    auto bytes = read_file(path);
    bytes.resize(bytes.size() - 64);
    std::ofstream(path, std::ios::binary)
        .write(reinterpret_cast<char*>(bytes.data()),
               std::streamsize(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  }
  std::remove(path.c_str());
}

TEST_CASE("mismatched architectures are rejected explicitly") {
  ModelConfig a = tiny_model_config();
  ModelConfig b = a;
  CHECK_NOTHROW(check_model_compatible(a, b));
  b.autoencoder.latent_dim = 16;
  b.autoencoder.z1_dim = 12;
  b.flow.dim = 12;
  CHECK_THROWS_WITH_AS(check_model_compatible(a, b),
                       doctest::Contains("latent_dim"), ValueError);
}

TEST_CASE("resume continues epoch numbering") {
  Dataset ds = tiny_dataset(4);
  Model model(tiny_model_config(), 21);
  Adam adam(model.params());
  TrainConfig tc;
  tc.batch_size = 6;
  tc.epochs = 2;
  tc.seed = 13;
  Rng rng(tc.seed);
  TrainResult first = train(model, adam, ds, tc, rng);
  CHECK(first.history.back().epoch == 1);

  tc.epochs = 4;
  TrainResult second = train(model, adam, ds, tc, rng, 2);
  REQUIRE(second.history.size() == 2);
  CHECK(second.history.front().epoch == 2);
  CHECK(second.history.back().epoch == 3);
}
