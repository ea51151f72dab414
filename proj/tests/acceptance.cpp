// Acceptance suite: one criterion per index, one PASS/FAIL line each.
// Run with no arguments for all criteria, or with an index (1-13).

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "matrixkit/config.hpp"
#include "matrixkit/diffusion.hpp"
#include "matrixkit/error.hpp"
#include "matrixkit/evalsuite.hpp"
#include "matrixkit/io.hpp"
#include "matrixkit/parallel.hpp"
#include "matrixkit/reference.hpp"
#include "matrixkit/synthscene.hpp"
#include "matrixkit/tasks.hpp"
#include "test_helpers.hpp"

using namespace matrixkit;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Check {
  std::string label;
  bool pass;
};

std::vector<Check> g_checks;

void expect(bool ok, const std::string& label) {
  g_checks.push_back({label, ok});
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Shared overfit model for criteria 7-9: the desk-scale configuration trained
// on four synthetic scenes. The trained checkpoint is cached on disk so the
// three criteria (and reruns) reuse one training run.

struct OverfitSetup {
  RunConfig cfg;
  std::vector<Scene> scenes;
  Backbone model;

  OverfitSetup() : model(make_config().model) {}

  static RunConfig make_config() {
    RunConfig cfg;  // desk-scale model and generator defaults
    cfg.train.steps = 12000;
    cfg.train.lr = 2e-3;
    cfg.train.warmup_steps = 200;
    cfg.train.batch_size = 2;
    cfg.train.n_views = 4;
    cfg.train.seed = 11;
    cfg.train.shuffle_views = false;  // overfit run: fixed reference view
    cfg.train.curriculum.task_ratios = {0.3, 0.4, 0.3, 0.0};
    cfg.train.curriculum.cond_dropout = 0.0;
    cfg.guidance.rgb = cfg.guidance.pose = cfg.guidance.depth = 1.0;
    cfg.guidance.steps = 50;
    cfg.gen.scenes = 4;
    return cfg;
  }
};

OverfitSetup& overfit_setup() {
  static OverfitSetup setup = [] {
    OverfitSetup s;
    s.cfg = OverfitSetup::make_config();
    for (int i = 0; i < s.cfg.gen.scenes; ++i)
      s.scenes.push_back(generate_scene(splitmix_combine(100, i), s.cfg.gen));

    const std::string ckpt = "acceptance_overfit.mxk";
    bool loaded = false;
    try {
      s.model = Backbone::load_checkpoint(ckpt);
      loaded = s.model.params().scalar_count() ==
               Backbone(s.cfg.model).params().scalar_count();
      if (loaded)
        std::printf("# criterion 7-9 setup: reusing cached %s\n", ckpt.c_str());
    } catch (...) {
      loaded = false;
    }
    if (!loaded) {
      std::printf("# criterion 7-9 setup: training the desk-scale model (%d steps)...\n",
                  s.cfg.train.steps);
      std::fflush(stdout);
      s.model = Backbone(s.cfg.model);
      s.model.init_params(s.cfg.train.seed);
      const auto t0 = Clock::now();
      train(s.model, s.scenes, s.cfg.make_schedule(), s.cfg.train, s.cfg.codec);
      std::printf("# training took %.0f s\n", seconds_since(t0));
      s.model.save_checkpoint(ckpt);
    }
    return s;
  }();
  return setup;
}

TaskContext overfit_context(std::uint64_t seed) {
  OverfitSetup& s = overfit_setup();
  TaskContext ctx;
  ctx.model = &s.model;
  ctx.schedule = s.cfg.make_schedule();
  ctx.guidance = s.cfg.guidance;
  ctx.codec = s.cfg.codec;
  ctx.fov_deg = s.cfg.fov_deg;
  ctx.seed = seed;
  return ctx;
}

// ---------------------------------------------------------------------------

void criterion_1() {  // camera <-> ray map round trips
  const auto t0 = Clock::now();
  const int n = 1000;
  std::vector<double> rot_err(n), center_err(n), pluecker(n);
  parallel_for(n, [&](std::int64_t i) {
    Rng rng = Rng::stream(4242, static_cast<std::uint64_t>(i));
    const Camera cam = matrixkit::testing::random_camera(rng, 64, 64);
    const RayMap rm = camera_to_raymap(cam, 16, 16);
    double worst = 0.0;
    for (std::size_t k = 0; k < rm.directions.size(); ++k)
      worst = std::max(worst, std::abs(rm.directions[k].dot(rm.moments[k])));
    pluecker[i] = worst;
    const Camera rec = recover_camera(rm);
    rot_err[i] = rotation_geodesic_rad(rec.rotation, cam.rotation);
    center_err[i] = (rec.center() - cam.center()).norm();
  });
  const double elapsed = seconds_since(t0);
  expect(*std::max_element(rot_err.begin(), rot_err.end()) < 1e-6,
         "rotation error < 1e-6 rad on 1000 random cameras");
  expect(*std::max_element(center_err.begin(), center_err.end()) < 1e-6,
         "center error < 1e-6 on 1000 random cameras");
  expect(*std::max_element(pluecker.begin(), pluecker.end()) < 1e-9,
         "Pluecker constraint < 1e-9 on every emitted ray");
  expect(elapsed < 5.0, "runtime < 5 s (" + std::to_string(elapsed) + " s)");
}

void criterion_2() {  // noisy pose recovery
  const auto t0 = Clock::now();
  const double sigmas[4] = {0.0, 0.005, 0.01, 0.02};
  const int trials_per_level = 500;
  double medians[4];
  for (int level = 0; level < 4; ++level) {
    const int n = sigmas[level] == 0.01 ? 1000 : trials_per_level;
    std::vector<double> err(n);
    parallel_for(n, [&](std::int64_t i) {
      Rng rng = Rng::stream(977 + level, static_cast<std::uint64_t>(i));
      const Camera cam = matrixkit::testing::random_camera(rng, 64, 64);
      RayMap rm = camera_to_raymap(cam, 16, 16);
      for (std::size_t k = 0; k < rm.directions.size(); ++k) {
        for (int c = 0; c < 3; ++c) {
          rm.directions[k](c) += sigmas[level] * rng.normal();
          rm.moments[k](c) += sigmas[level] * rng.normal();
        }
        rm.directions[k].normalize();
      }
      err[i] = rotation_geodesic_rad(recover_camera(rm).rotation, cam.rotation);
    });
    std::sort(err.begin(), err.end());
    medians[level] = err[err.size() / 2];
  }
  const double elapsed = seconds_since(t0);
  const double median_001_deg = medians[2] * 180.0 / kPi;
  std::printf("#   measured median rotation error at sigma=0.01: %.4f deg\n",
              median_001_deg);
  expect(median_001_deg < 5.0, "median rotation error < 5 deg at sigma 0.01");
  expect(medians[0] <= medians[1] && medians[1] <= medians[2] &&
             medians[2] <= medians[3],
         "error monotone over sigma in {0, 0.005, 0.01, 0.02}");
  expect(elapsed < 30.0, "runtime < 30 s (" + std::to_string(elapsed) + " s)");
}

void criterion_3() {  // diffusion algebra
  const Schedule s = Schedule::make(200);
  double vp_worst = 0.0;
  for (int t = 0; t < s.T; ++t)
    vp_worst = std::max(vp_worst,
                        std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0));
  expect(vp_worst < 1e-9, "VP identity alpha^2 + sigma^2 = 1 within 1e-9");

  Rng rng(31337);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x0(256), eps(256);
    for (int i = 0; i < 256; ++i) {
      x0(i) = rng.normal();
      eps(i) = rng.normal();
    }
    const int t = 1 + static_cast<int>(rng.uniform_int(s.T - 1));
    const Eigen::VectorXd xt = corrupt(x0, t, eps, s);
    const Eigen::VectorXd v = v_target(x0, t, eps, s);
    worst = std::max(worst,
                     (s.alpha(t) * xt - s.sigma(t) * v - x0).cwiseAbs().maxCoeff());
    worst = std::max(worst,
                     (s.sigma(t) * xt + s.alpha(t) * v - eps).cwiseAbs().maxCoeff());
  }
  expect(worst < 1e-9, "x0/eps reconstruction from (x_t, v) exact to 1e-9");
}

void criterion_4() {  // gradient correctness
  const auto t0 = Clock::now();
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
  Backbone model(cfg);
  expect(model.params().scalar_count() <= 10000,
         "config has at most 10k parameters (" +
             std::to_string(model.params().scalar_count()) + ")");
  model.randomize_all_params(3, 0.08);

  Rng rng(555);
  Batch batch;
  batch.t = 5;
  auto rand_map = [&](int view, Modality m) {
    ViewMap v = ViewMap::make(view, m, cfg.resolution(m));
    for (Eigen::Index i = 0; i < v.data.size(); ++i) v.data(i) = rng.normal();
    return v;
  };
  batch.condition = {rand_map(0, Modality::rgb), rand_map(0, Modality::pose),
                     rand_map(1, Modality::rgb)};
  batch.noisy_target = {rand_map(1, Modality::pose), rand_map(0, Modality::depth)};
  for (const auto& m : batch.noisy_target) {
    ViewMap t = m;
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data(i) = rng.normal();
    batch.v_target.push_back(t);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(m.data.size());
    if (m.modality == Modality::depth)
      for (int px = 0; px < cfg.depth_res * cfg.depth_res; ++px)
        if (rng.uniform() < 0.3) w(2 * px) = 0.0;
    batch.loss_weight.push_back(w);
  }

  model.params().zero_grad();
  model.loss(batch, true);
  const double eps = 1e-3;
  double max_rel = 0.0;
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
      max_rel = std::max(max_rel,
                         std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  }
  const double elapsed = seconds_since(t0);
  std::printf("#   max relative gradient error: %.3g\n", max_rel);
  expect(max_rel < 1e-4, "analytic gradient vs central differences < 1e-4");
  expect(elapsed < 120.0, "runtime < 2 min (" + std::to_string(elapsed) + " s)");
}

void criterion_5() {  // masked-learning curriculum frequencies
  Rng rng(8080);
  const int draws = 100000;
  std::array<int, 4> counts{0, 0, 0, 0};
  int dropped = 0;
  for (int i = 0; i < draws; ++i) {
    const MaskPlan plan = sample_mask_plan(rng, 4, {true, true, true});
    ++counts[static_cast<int>(plan.task)];
    dropped += plan.cond_dropped;
  }
  const double expected[4] = {0.3, 0.3, 0.3, 0.1};
  bool tasks_ok = true;
  for (int k = 0; k < 4; ++k)
    tasks_ok = tasks_ok &&
               std::abs(counts[k] / static_cast<double>(draws) - expected[k]) < 0.01;
  expect(tasks_ok, "task frequencies within +-1% of (0.3, 0.3, 0.3, 0.1)");
  expect(std::abs(dropped / static_cast<double>(draws) - 0.1) < 0.005,
         "condition-dropout frequency within +-0.5% of 10%");
}

void criterion_6() {  // token layout + permutation equivariance
  ModelConfig paper;
  paper.hidden_enc = 1024;
  paper.hidden_dec = 1408;
  paper.enc_blocks = 20;
  paper.dec_blocks = 40;
  paper.heads = 16;
  paper.max_views = 8;
  paper.rgb_res = 32;  // VAE latent raster of a 256 image
  paper.rgb_patch = 2;
  paper.ray_res = 16;
  paper.ray_patch = 1;
  paper.depth_res = 64;
  paper.depth_patch = 4;
  paper.validate();
  expect(paper.tokens_per_map() == 256, "paper-scale config: 256 tokens per map");

  ModelConfig desk;
  desk.validate();
  expect(desk.tokens_per_map() == 64, "desk-scale config: 64 tokens per map");

  ModelConfig small;
  small.hidden_enc = 32;
  small.hidden_dec = 48;
  small.enc_blocks = 2;
  small.dec_blocks = 2;
  small.heads = 2;
  small.rgb_res = 16;
  small.rgb_patch = 4;
  small.ray_res = 4;
  small.ray_patch = 1;
  small.depth_res = 8;
  small.depth_patch = 2;
  small.time_embed_dim = 16;
  Backbone model(small);
  model.randomize_all_params(7, 0.05);
  Rng rng(99);
  auto rand_map = [&](int view, Modality m) {
    ViewMap v = ViewMap::make(view, m, small.resolution(m));
    for (Eigen::Index i = 0; i < v.data.size(); ++i) v.data(i) = rng.normal();
    return v;
  };
  std::vector<ViewMap> cond{rand_map(0, Modality::rgb), rand_map(1, Modality::rgb),
                            rand_map(1, Modality::pose), rand_map(2, Modality::depth)};
  std::vector<ViewMap> target{rand_map(3, Modality::rgb)};
  const auto a = model.forward(cond, target, 4);
  std::vector<ViewMap> perm{cond[2], cond[3], cond[1], cond[0]};
  const auto b = model.forward(perm, target, 4);
  const double diff = (a[0].data - b[0].data).cwiseAbs().maxCoeff();
  expect(diff < 1e-5, "condition-view permutation equivariance < 1e-5");
}

void criterion_7() {  // overfit pose proxy
  OverfitSetup& s = overfit_setup();
  const TaskContext ctx = overfit_context(42);
  double rra = 0.0, ca = 0.0;
  for (const auto& scene : s.scenes) {
    std::vector<Image> images;
    std::vector<Camera> gt;
    for (const auto& v : scene.views) {
      images.push_back(v.rgb);
      gt.push_back(v.camera);
    }
    const auto pred = estimate_poses(ctx, images);
    rra += relative_rotation_accuracy(pred, gt);
    ca += camera_center_accuracy(pred, gt);
  }
  rra /= static_cast<double>(s.scenes.size());
  ca /= static_cast<double>(s.scenes.size());
  std::printf("#   overfit pose: RRA@15 %.3f, CA@0.1 %.3f\n", rra, ca);
  expect(rra >= 0.9, "pairwise RRA@15 >= 0.9 on the overfit scenes");
  expect(ca >= 0.9, "CA@0.1 >= 0.9 on the overfit scenes");
}

void criterion_8() {  // overfit depth proxy + metric oracle
  OverfitSetup& s = overfit_setup();
  const TaskContext ctx = overfit_context(43);
  double abs_rel = 0.0;
  int n = 0;
  for (const auto& scene : s.scenes) {
    std::vector<PosedImage> posed;
    for (const auto& v : scene.views) posed.push_back({v.rgb, v.camera});
    const auto depths = predict_depth(ctx, posed);
    for (std::size_t v = 0; v < depths.size(); ++v) {
      const DepthMetrics m = depth_metrics(depths[v], scene.views[v].depth);
      abs_rel += m.abs_rel;
      ++n;
    }
  }
  abs_rel /= n;
  std::printf("#   overfit depth: AbsRel %.4f over %d views\n", abs_rel, n);
  expect(abs_rel < 0.05, "AbsRel < 0.05 on the overfit scenes");

  // Monocular input: predicted validity must cover the foreground.
  const Scene& first = s.scenes[0];
  const auto mono = predict_depth(
      ctx, {{first.views[0].rgb, first.views[0].camera}});
  std::size_t joint = 0, gt_valid = 0;
  for (std::size_t i = 0; i < mono[0].valid.size(); ++i) {
    gt_valid += first.views[0].depth.valid[i] != 0;
    joint += mono[0].valid[i] && first.views[0].depth.valid[i];
  }
  const double coverage =
      gt_valid ? static_cast<double>(joint) / static_cast<double>(gt_valid) : 0.0;
  std::printf("#   monocular coverage of the foreground: %.3f\n", coverage);
  expect(coverage >= 0.9, "monocular valid-pixel coverage >= 0.9 of foreground");

  Rng rng(808);
  bool oracle_ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    DepthMap gt(16, 16), pred(16, 16);
    for (std::size_t i = 0; i < gt.depth.size(); ++i) {
      if (rng.uniform() < 0.9) {
        gt.depth[i] = rng.uniform(0.2, 4.0);
        gt.valid[i] = 1;
        pred.depth[i] = gt.depth[i] * rng.uniform(0.8, 1.25);
        pred.valid[i] = 1;
      }
    }
    const DepthMetrics a = depth_metrics(pred, gt);
    const DepthMetrics b = reference::depth_metrics_bruteforce(pred, gt);
    oracle_ok = oracle_ok && std::abs(a.abs_rel - b.abs_rel) < 1e-12 &&
                std::abs(a.log10 - b.log10) < 1e-12 && std::abs(a.rms - b.rms) < 1e-12 &&
                a.delta1 == b.delta1 && a.delta2 == b.delta2 && a.delta3 == b.delta3 &&
                a.tau == b.tau;
  }
  expect(oracle_ok, "depth metrics match brute-force recomputation to 1e-12");
}

void criterion_9() {  // overfit NVS proxy + image metric oracle
  OverfitSetup& s = overfit_setup();
  const TaskContext ctx = overfit_context(44);
  double psnr_sum = 0.0;
  for (const auto& scene : s.scenes) {
    // Self-reconstruction: the target camera is one of the condition cameras.
    std::vector<PosedImage> posed;
    for (int v = 0; v < 3; ++v)
      posed.push_back({scene.views[v].rgb, scene.views[v].camera});
    const auto imgs = synthesize_views(ctx, posed, {scene.views[2].camera});
    psnr_sum += psnr(imgs[0], scene.views[2].rgb);
  }
  const double mean_psnr = psnr_sum / static_cast<double>(s.scenes.size());
  std::printf("#   overfit NVS: self-reconstruction PSNR %.2f dB\n", mean_psnr);
  expect(mean_psnr > 25.0, "self-reconstruction PSNR > 25 dB on overfit scenes");

  Rng rng(909);
  bool oracle_ok = true;
  for (int trial = 0; trial < 5; ++trial) {
    Image a(24, 24, 3), b(24, 24, 3);
    for (auto& v : a.data) v = rng.uniform();
    for (auto& v : b.data) v = rng.uniform();
    oracle_ok = oracle_ok &&
                std::abs(ssim(a, b) - reference::ssim_direct(a, b)) < 1e-9 &&
                std::abs(psnr(a, b) - reference::psnr_direct(a, b)) < 1e-9;
  }
  expect(oracle_ok, "PSNR/SSIM match their double implementations to 1e-9");
}

void criterion_10() {  // fusion efficacy
  // Fronto-parallel plane rig: exact depths, predictable landings.
  SceneSpec spec;
  Primitive plane;
  plane.kind = PrimitiveKind::plane;
  plane.center = Vec3(0, 0, 0.8);
  plane.size = Vec3(50, 50, 0);
  plane.albedo = Vec3(0.7, 0.6, 0.5);
  spec.primitives.push_back(plane);
  spec.lights.push_back({Vec3(0, 0, 1), Vec3(0.6, 0.6, 0.6)});
  const double f = focal_from_fov_deg(50.0, 32);
  std::vector<Camera> cams;
  std::vector<DepthMap> depths(4);
  std::vector<Image> rgbs(4);
  for (int i = 0; i < 4; ++i) {
    const Vec3 c(0.06 * i, 0.015 * i, -1.0);
    cams.push_back(Camera::look_at(c, c + Vec3(0, 0, 1), f, 32, 32));
    render(spec, cams[i], 32, 32, &rgbs[i], &depths[i]);
  }

  Rng rng(4040);
  std::vector<std::size_t> injected;
  for (std::size_t i = 0; i < depths[0].depth.size(); ++i) {
    if (depths[0].valid[i] && rng.uniform() < 0.05) {
      depths[0].depth[i] *= 2.0;
      injected.push_back(i);
    }
  }
  const auto filtered = geometric_filter(depths, cams);
  std::size_t removed = 0;
  for (auto i : injected) removed += filtered[0].valid[i] == 0;
  const double rate = static_cast<double>(removed) / injected.size();
  std::printf("#   outlier removal rate: %.3f (%zu injected)\n", rate, injected.size());
  expect(rate >= 0.95, ">= 95% of injected 2x outliers removed");

  // Gaussian-noise fusion: per-pixel RMSE strictly reduced.
  auto clean = depths;
  for (auto i : injected) {
    clean[0].depth[i] /= 2.0;  // undo injection for the noise experiment
  }
  auto noisy = clean;
  for (auto& d : noisy)
    for (std::size_t i = 0; i < d.depth.size(); ++i)
      if (d.valid[i]) d.depth[i] += 0.003 * rng.normal();
  const auto fused =
      geometric_fusion(noisy, cams, FusionStatistic::mean,
                       {.pix_thresh = 2.0, .depth_thresh = 0.05});
  double rmse_noisy = 0, rmse_fused = 0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < clean.size(); ++v)
    for (std::size_t i = 0; i < clean[v].depth.size(); ++i) {
      if (!clean[v].valid[i]) continue;
      rmse_noisy += std::pow(noisy[v].depth[i] - clean[v].depth[i], 2);
      rmse_fused += std::pow(fused[v].depth[i] - clean[v].depth[i], 2);
      ++n;
    }
  rmse_noisy = std::sqrt(rmse_noisy / n);
  rmse_fused = std::sqrt(rmse_fused / n);
  std::printf("#   RMSE unfused %.5f -> fused %.5f\n", rmse_noisy, rmse_fused);
  expect(rmse_fused < rmse_noisy, "fused RMSE strictly below unfused under noise");
}

void criterion_11() {  // CFG identity at scale 1.0
  ModelConfig cfg;
  cfg.hidden_enc = 32;
  cfg.hidden_dec = 48;
  cfg.enc_blocks = 2;
  cfg.dec_blocks = 2;
  cfg.heads = 2;
  cfg.rgb_res = 16;
  cfg.rgb_patch = 4;
  cfg.ray_res = 4;
  cfg.ray_patch = 1;
  cfg.depth_res = 8;
  cfg.depth_patch = 2;
  cfg.time_embed_dim = 16;
  Backbone model(cfg);
  model.randomize_all_params(21, 0.05);
  const Schedule schedule = Schedule::make(40);

  DatasetGenConfig gen;
  gen.views_per_scene = 2;
  gen.resolution = 16;
  gen.depth_resolution = 8;
  const Scene scene = generate_scene(5, gen);
  SampleRequest req;
  req.condition.push_back(encode_rgb_map(scene.views[0].rgb, 0));
  req.condition.push_back(encode_raymap(
      camera_to_raymap(scene.views[0].camera, 4, 4), 0, CodecConfig{}));
  req.targets = {{1, Modality::rgb}, {1, Modality::depth}};

  GuidanceConfig unity;
  unity.rgb = unity.pose = unity.depth = 1.0;
  unity.steps = 12;
  Rng rng_a(77);
  const auto guided = sample(model, req, schedule, unity, rng_a);

  // Independent conditional-only DDIM loop, bit-compared.
  Rng rng_b(77);
  std::vector<int> ts;
  for (int i = 0; i <= unity.steps; ++i) {
    const int t = static_cast<int>(std::lround(
        (schedule.T - 1) * (1.0 - static_cast<double>(i) / unity.steps)));
    if (ts.empty() || ts.back() != t) ts.push_back(t);
  }
  std::vector<ViewMap> x;
  for (const auto& [view, modality] : req.targets) {
    ViewMap m = ViewMap::make(view, modality, cfg.resolution(modality));
    for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data(i) = rng_b.normal();
    x.push_back(std::move(m));
  }
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const int t = ts[k], tn = ts[k + 1];
    const auto v_hat = model.forward(req.condition, x, t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Eigen::VectorXd x0 =
          schedule.alpha(t) * x[i].data - schedule.sigma(t) * v_hat[i].data;
      const Eigen::VectorXd eps =
          schedule.sigma(t) * x[i].data + schedule.alpha(t) * v_hat[i].data;
      x[i].data = schedule.alpha(tn) * x0 + schedule.sigma(tn) * eps;
    }
  }
  bool identical = true;
  for (std::size_t i = 0; i < x.size(); ++i)
    identical = identical && (guided[i].data - x[i].data).cwiseAbs().maxCoeff() == 0.0;
  expect(identical, "guidance 1.0 reproduces conditional sampling bit-exactly");
}

void criterion_12() {  // metric oracles
  Rng rng(616);
  PointCloud a, b;
  for (int i = 0; i < 1000; ++i) {
    a.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
    b.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
  }
  const PointCloudMetrics fast = pointcloud_metrics(a, b);
  const PointCloudMetrics brute = reference::pointcloud_metrics_bruteforce(a, b);
  expect(std::abs(fast.accuracy - brute.accuracy) < 1e-12 &&
             std::abs(fast.completeness - brute.completeness) < 1e-12 &&
             std::abs(fast.overall - brute.overall) < 1e-12,
         "point-cloud metrics match O(N^2) brute force at N=1000");

  bool ca_invariant = true, two_view = true;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Camera> gt, pred;
    for (int i = 0; i < 5; ++i) {
      gt.push_back(matrixkit::testing::random_camera(rng));
      Camera p = gt.back();
      const Vec3 c =
          p.center() + 0.03 * Vec3(rng.normal(), rng.normal(), rng.normal());
      p.translation = -p.rotation * c;
      pred.push_back(p);
    }
    const double base = camera_center_accuracy(pred, gt);
    const Mat3 r = matrixkit::testing::random_rotation(rng);
    const double s = rng.uniform(0.4, 2.5);
    const Vec3 t(rng.normal(), rng.normal(), rng.normal());
    std::vector<Camera> transformed = pred;
    for (auto& cam : transformed) {
      const Vec3 c = s * (r * cam.center()) + t;
      cam.rotation = cam.rotation * r.transpose();
      cam.translation = -cam.rotation * c;
    }
    ca_invariant =
        ca_invariant && camera_center_accuracy(transformed, gt) == base;

    std::vector<Camera> gt2{gt[0], gt[1]};
    std::vector<Camera> pred2{matrixkit::testing::random_camera(rng),
                              matrixkit::testing::random_camera(rng)};
    two_view = two_view && camera_center_accuracy(pred2, gt2) == 1.0;
  }
  expect(ca_invariant, "CA invariant under global similarity transforms");
  expect(two_view, "2-view CA is always 1.0");
}

void criterion_13() {  // CLI determinism
  namespace fs = std::filesystem;
  const std::string dir = matrixkit::testing::scratch_dir("acc13");
  const std::string cli = MATRIXKIT_CLI_PATH;
  const std::string cfg_path = dir + "/config.json";
  write_text_file(cfg_path, R"({
  "schema_version": 1,
  "model": {"hidden_enc": 32, "hidden_dec": 48, "enc_blocks": 1, "dec_blocks": 1,
            "heads": 2, "max_views": 4, "rgb_res": 16, "rgb_patch": 4,
            "ray_res": 4, "ray_patch": 1, "depth_res": 8, "depth_patch": 2,
            "time_embed_dim": 16},
  "schedule": {"steps": 20, "kind": "vp_cosine"},
  "train": {"steps": 8, "lr": 0.001, "warmup_steps": 2, "batch_size": 1,
            "n_views": 2, "seed": 3},
  "guidance": {"rgb": 1.0, "pose": 1.0, "depth": 1.0, "steps": 3},
  "gen": {"scenes": 2, "views_per_scene": 2, "resolution": 16,
          "depth_resolution": 8}
})");
  auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + " > /dev/null 2>&1").c_str()) == 0;
  };
  auto same_tree = [&](const std::string& a, const std::string& b) {
    for (const auto& e : fs::recursive_directory_iterator(a)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), a);
      if (read_text_file(e.path().string()) !=
          read_text_file((fs::path(b) / rel).string()))
        return false;
    }
    return true;
  };

  bool ok = run("gen-data --config " + cfg_path + " --out " + dir + "/d1 --seed 9") &&
            run("gen-data --config " + cfg_path + " --out " + dir + "/d2 --seed 9");
  expect(ok && same_tree(dir + "/d1", dir + "/d2"),
         "gen-data twice with one seed is byte-identical");

  ok = run("train --config " + cfg_path + " --data " + dir + "/d1 --out " + dir + "/r1") &&
       run("train --config " + cfg_path + " --data " + dir + "/d1 --out " + dir + "/r2");
  const bool train_same =
      ok &&
      read_text_file(dir + "/r1/loss.csv") == read_text_file(dir + "/r2/loss.csv") &&
      read_text_file(dir + "/r1/ckpt_final.mxk") ==
          read_text_file(dir + "/r2/ckpt_final.mxk");
  expect(train_same, "train twice with one seed gives identical traces and weights");

  ok = run("infer depth --config " + cfg_path + " --ckpt " + dir +
           "/r1/ckpt_final.mxk --scene " + dir + "/d1/scene_0000 --out " + dir +
           "/p1 --seed 4") &&
       run("infer depth --config " + cfg_path + " --ckpt " + dir +
           "/r1/ckpt_final.mxk --scene " + dir + "/d1/scene_0000 --out " + dir +
           "/p2 --seed 4");
  expect(ok && same_tree(dir + "/p1", dir + "/p2"),
         "sampling twice with one seed is byte-identical");
  fs::remove_all(dir);
}

const struct {
  int index;
  const char* name;
  std::function<void()> fn;
} kCriteria[] = {
    {1, "geometry round trips", criterion_1},
    {2, "noisy pose recovery", criterion_2},
    {3, "diffusion algebra", criterion_3},
    {4, "gradient correctness", criterion_4},
    {5, "masked-learning curriculum", criterion_5},
    {6, "token layout and equivariance", criterion_6},
    {7, "overfit pose proxy", criterion_7},
    {8, "overfit depth proxy", criterion_8},
    {9, "overfit NVS proxy", criterion_9},
    {10, "fusion efficacy", criterion_10},
    {11, "CFG identity", criterion_11},
    {12, "metric oracles", criterion_12},
    {13, "determinism", criterion_13},
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  if (argc > 1) only = std::atoi(argv[1]);

  int failures = 0;
  for (const auto& c : kCriteria) {
    if (only != 0 && c.index != only) continue;
    g_checks.clear();
    bool threw = false;
    std::string what;
    try {
      c.fn();
    } catch (const std::exception& e) {
      threw = true;
      what = e.what();
    }
    bool pass = !threw;
    for (const auto& chk : g_checks) pass = pass && chk.pass;
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", c.index, c.name);
    for (const auto& chk : g_checks)
      std::printf("      [%s] %s\n", chk.pass ? "ok" : "FAILED", chk.label.c_str());
    if (threw) std::printf("      [FAILED] exception: %s\n", what.c_str());
    failures += !pass;
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
