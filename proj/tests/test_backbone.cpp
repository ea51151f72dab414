#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "matrixkit/backbone.hpp"
#include "matrixkit/error.hpp"
#include "matrixkit/rng.hpp"
#include "test_helpers.hpp"

using namespace matrixkit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Small config for fast structural tests.
ModelConfig small_config() {
  ModelConfig cfg;
  cfg.hidden_enc = 32;
  cfg.hidden_dec = 48;
  cfg.enc_blocks = 2;
  cfg.dec_blocks = 2;
  cfg.heads = 2;
  cfg.max_views = 4;
  cfg.rgb_res = 16;
  cfg.rgb_patch = 4;
  cfg.ray_res = 4;
  cfg.ray_patch = 1;
  cfg.depth_res = 8;
  cfg.depth_patch = 2;
  cfg.time_embed_dim = 16;
  return cfg;
}

// Gradient-check config, kept under 10k parameters.
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.hidden_enc = 8;
  cfg.hidden_dec = 8;
  cfg.enc_blocks = 1;
  cfg.dec_blocks = 1;
  cfg.heads = 2;
  cfg.max_views = 2;
  cfg.rgb_res = 4;
  cfg.rgb_patch = 2;
  cfg.ray_res = 2;
  cfg.ray_patch = 1;
  cfg.depth_res = 4;
  cfg.depth_patch = 2;
  cfg.time_embed_dim = 8;
  return cfg;
}

ViewMap random_map(Rng& rng, const ModelConfig& cfg, int view, Modality m) {
  ViewMap v = ViewMap::make(view, m, cfg.resolution(m));
  for (Eigen::Index i = 0; i < v.data.size(); ++i) v.data(i) = rng.normal();
  return v;
}

Batch random_batch(Rng& rng, const ModelConfig& cfg) {
  Batch b;
  b.t = 3;
  b.condition.push_back(random_map(rng, cfg, 0, Modality::rgb));
  b.condition.push_back(random_map(rng, cfg, 0, Modality::pose));
  b.condition.push_back(random_map(rng, cfg, 1, Modality::rgb));
  b.noisy_target.push_back(random_map(rng, cfg, 1, Modality::pose));
  b.noisy_target.push_back(random_map(rng, cfg, 1, Modality::depth));
  b.noisy_target.push_back(random_map(rng, cfg, 0, Modality::depth));
  for (const auto& m : b.noisy_target) {
    ViewMap t = m;
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data(i) = rng.normal();
    b.v_target.push_back(t);
    VectorXd w = VectorXd::Ones(m.data.size());
    if (m.modality == Modality::depth) {
      // Knock out some disparity-channel pixels, as a validity mask would.
      const int res = cfg.resolution(Modality::depth);
      for (int px = 0; px < res * res; ++px)
        if (rng.uniform() < 0.3) w(2 * px) = 0.0;
    }
    b.loss_weight.push_back(w);
  }
  return b;
}

}  // namespace

TEST_CASE("model config: token counts agree across modalities") {
  // Desk-scale defaults: 32/4, 8/1, 16/2 -> 64 tokens each.
  ModelConfig desk;
  CHECK(desk.tokens_per_map() == 64);
  CHECK_NOTHROW(desk.validate());

  // Full-scale layout: RGB latents 32x32 patch 2, rays 16x16 patch 1,
  // depth 64x64 patch 4 -> 256 tokens each.
  ModelConfig paper;
  paper.hidden_enc = 1024;
  paper.hidden_dec = 1408;
  paper.enc_blocks = 20;
  paper.dec_blocks = 40;
  paper.heads = 16;
  paper.max_views = 8;
  paper.rgb_res = 32;
  paper.rgb_patch = 2;
  paper.ray_res = 16;
  paper.ray_patch = 1;
  paper.depth_res = 64;
  paper.depth_patch = 4;
  CHECK_NOTHROW(paper.validate());
  CHECK(paper.tokens_per_map() == 256);

  ModelConfig bad = desk;
  bad.depth_res = 20;  // 20/2 = 10 != 8
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = desk;
  bad.rgb_res = 30;  // not divisible by patch 4
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("sinusoidal encodings: equal tags match, distinct ids differ") {
  const VectorXd a = sinusoidal_encoding(3, 32, 64.0);
  const VectorXd b = sinusoidal_encoding(3, 32, 64.0);
  CHECK((a - b).norm() == 0.0);
  double min_dist = 1e9;
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j)
      min_dist = std::min(min_dist, (sinusoidal_encoding(i, 32, 64.0) -
                                     sinusoidal_encoding(j, 32, 64.0))
                                        .norm());
  CHECK(min_dist > 0.0);
}

TEST_CASE("rope rotation preserves token norms and inverts exactly") {
  Rng rng(401);
  MatrixXd x(32, 10);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<TokenTag> tags;
  for (int j = 0; j < 10; ++j)
    tags.push_back({0, Modality::rgb, j % 4, j / 4});
  MatrixXd rotated = x;
  kernels::apply_rope(rotated, 2, tags, false);
  for (int j = 0; j < 10; ++j)
    CHECK(rotated.col(j).norm() == doctest::Approx(x.col(j).norm()).epsilon(1e-12));
  kernels::apply_rope(rotated, 2, tags, true);
  CHECK((rotated - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero-initialized head gives exactly zero output") {
  const ModelConfig cfg = small_config();
  Backbone model(cfg);
  model.init_params(1);
  Rng rng(403);
  std::vector<ViewMap> cond{random_map(rng, cfg, 0, Modality::rgb)};
  std::vector<ViewMap> target{random_map(rng, cfg, 1, Modality::rgb),
                              random_map(rng, cfg, 1, Modality::depth)};
  const auto out = model.forward(cond, target, 5);
  REQUIRE(out.size() == 2);
  for (const auto& m : out) CHECK(m.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward output shapes match the target maps") {
  const ModelConfig cfg = small_config();
  Backbone model(cfg);
  model.randomize_all_params(2, 0.05);
  Rng rng(407);
  std::vector<ViewMap> cond{random_map(rng, cfg, 0, Modality::rgb)};
  std::vector<ViewMap> target{random_map(rng, cfg, 1, Modality::pose),
                              random_map(rng, cfg, 0, Modality::depth)};
  const auto out = model.forward(cond, target, 2);
  REQUIRE(out.size() == target.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].view_id == target[i].view_id);
    CHECK(out[i].modality == target[i].modality);
    CHECK(out[i].data.size() == target[i].data.size());
  }
}

TEST_CASE("forward: deterministic and equivariant under condition permutation") {
  const ModelConfig cfg = small_config();
  Backbone model(cfg);
  model.randomize_all_params(3, 0.05);
  Rng rng(409);
  std::vector<ViewMap> cond{random_map(rng, cfg, 0, Modality::rgb),
                            random_map(rng, cfg, 1, Modality::rgb),
                            random_map(rng, cfg, 1, Modality::pose),
                            random_map(rng, cfg, 2, Modality::depth)};
  std::vector<ViewMap> target{random_map(rng, cfg, 3, Modality::rgb)};

  const auto out1 = model.forward(cond, target, 7);
  const auto out2 = model.forward(cond, target, 7);
  CHECK((out1[0].data - out2[0].data).cwiseAbs().maxCoeff() == 0.0);

  // Permute condition maps (tokens travel with their tags).
  std::vector<ViewMap> perm{cond[3], cond[1], cond[0], cond[2]};
  const auto out3 = model.forward(perm, target, 7);
  CHECK((out1[0].data - out3[0].data).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("forward: empty target set is an error, empty condition is not") {
  const ModelConfig cfg = small_config();
  Backbone model(cfg);
  model.init_params(4);
  Rng rng(411);
  std::vector<ViewMap> cond{random_map(rng, cfg, 0, Modality::rgb)};
  CHECK_THROWS_AS(model.forward(cond, {}, 0), Error);
  std::vector<ViewMap> target{random_map(rng, cfg, 0, Modality::rgb)};
  CHECK_NOTHROW(model.forward({}, target, 0));
}

TEST_CASE("forward: out-of-range view id rejected") {
  const ModelConfig cfg = small_config();
  Backbone model(cfg);
  model.init_params(5);
  Rng rng(413);
  std::vector<ViewMap> target{random_map(rng, cfg, cfg.max_views, Modality::rgb)};
  CHECK_THROWS_AS(model.forward({}, target, 0), Error);
}

TEST_CASE("masked_mse: exact values") {
  const ModelConfig cfg = tiny_config();
  Rng rng(417);
  std::vector<ViewMap> target{random_map(rng, cfg, 0, Modality::rgb)};
  std::vector<VectorXd> w{VectorXd::Ones(target[0].data.size())};

  // pred == target -> 0
  CHECK(masked_mse(target, target, w) == 0.0);

  // pred == target + c -> c^2
  std::vector<ViewMap> shifted = target;
  shifted[0].data.array() += 0.37;
  CHECK(masked_mse(shifted, target, w) == doctest::Approx(0.37 * 0.37).epsilon(1e-12));

  // Masked entries do not contribute.
  std::vector<ViewMap> corrupt = shifted;
  w[0](5) = 0.0;
  corrupt[0].data(5) += 100.0;
  CHECK(masked_mse(corrupt, target, w) == doctest::Approx(0.37 * 0.37).epsilon(1e-12));
}

TEST_CASE("gradient check against central finite differences") {
  const ModelConfig cfg = tiny_config();
  Backbone model(cfg);
  REQUIRE(model.params().scalar_count() <= 10000);
  model.randomize_all_params(11, 0.08);

  Rng rng(419);
  Batch batch = random_batch(rng, cfg);

  model.params().zero_grad();
  const double base = model.loss(batch, true);
  CHECK(std::isfinite(base));

  const double eps = 1e-3;
  double max_rel_err = 0.0;
  for (auto& tensor : model.params().tensors()) {
    for (Eigen::Index i = 0; i < tensor.value.size(); ++i) {
      const double saved = tensor.value.data()[i];
      tensor.value.data()[i] = saved + eps;
      const double lp = model.loss(batch, false);
      tensor.value.data()[i] = saved - eps;
      const double lm = model.loss(batch, false);
      tensor.value.data()[i] = saved;
      const double fd = (lp - lm) / (2.0 * eps);
      const double an = tensor.grad.data()[i];
      const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      max_rel_err = std::max(max_rel_err, rel);
    }
  }
  CHECK(max_rel_err < 1e-4);
}

TEST_CASE("masked depth pixels have zero gradient contribution") {
  const ModelConfig cfg = tiny_config();
  Backbone model(cfg);
  model.randomize_all_params(13, 0.08);
  Rng rng(421);
  Batch batch = random_batch(rng, cfg);

  // Perturbing the v-target at a masked entry must not move the loss.
  const double l0 = model.loss(batch, false);
  bool found = false;
  for (std::size_t i = 0; i < batch.loss_weight.size() && !found; ++i) {
    for (Eigen::Index k = 0; k < batch.loss_weight[i].size() && !found; ++k) {
      if (batch.loss_weight[i](k) == 0.0) {
        batch.v_target[i].data(k) += 123.0;
        found = true;
      }
    }
  }
  REQUIRE(found);
  CHECK(model.loss(batch, false) == l0);
}

TEST_CASE("checkpoint: save/load round trip preserves values and config") {
  const ModelConfig cfg = small_config();
  Backbone model(cfg);
  model.randomize_all_params(17, 0.05);
  const std::string dir = testing::scratch_dir("ckpt");
  const std::string path = dir + "/model.mxk";
  model.save_checkpoint(path);

  Backbone loaded = Backbone::load_checkpoint(path);
  CHECK(loaded.config().hidden_dec == cfg.hidden_dec);
  CHECK(loaded.config().depth_res == cfg.depth_res);
  for (std::size_t i = 0; i < model.params().tensors().size(); ++i) {
    const auto& a = model.params().tensors()[i];
    const auto& b = loaded.params().tensors()[i];
    CHECK(a.name == b.name);
    for (Eigen::Index k = 0; k < a.value.size(); ++k)
      CHECK(b.value.data()[k] ==
            static_cast<double>(static_cast<float>(a.value.data()[k])));
  }

  // Corrupt one byte: the checksum must catch it.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(64);
    char c;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x40);
    f.seekp(64);
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(Backbone::load_checkpoint(path), Error);
  std::filesystem::remove_all(dir);
}
