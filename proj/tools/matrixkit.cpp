// Command-line entry point wiring dataset generation, training, inference,
// evaluation, fusion and trajectory tools into reproducible runs.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "matrixkit/config.hpp"
#include "matrixkit/error.hpp"
#include "matrixkit/evalsuite.hpp"
#include "matrixkit/io.hpp"
#include "matrixkit/jsonio.hpp"
#include "matrixkit/parallel.hpp"
#include "matrixkit/synthscene.hpp"
#include "matrixkit/tasks.hpp"

namespace fs = std::filesystem;
using namespace matrixkit;

namespace {

// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numeric: return 4;
  }
  return 3;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return RunConfig::load(path);
}

std::vector<std::string> dataset_scene_dirs(const std::string& dir) {
  if (fs::exists(fs::path(dir) / "meta.json")) return {dir};
  return list_scene_dirs(dir);
}

TaskContext make_context(const RunConfig& cfg, const Backbone& model,
                         std::uint64_t seed) {
  TaskContext ctx;
  ctx.model = &model;
  ctx.schedule = cfg.make_schedule();
  ctx.guidance = cfg.guidance;
  ctx.codec = cfg.codec;
  ctx.fov_deg = cfg.fov_deg;
  ctx.seed = seed;
  return ctx;
}

void warn_if_uncond_untrained(const RunConfig& cfg) {
  if (cfg.guidance.any_guided() && cfg.train.curriculum.cond_dropout <= 0.0)
    std::fprintf(stderr,
                 "warning: guidance > 1 requested but the configured training "
                 "never drops conditions; the unconditional branch is untrained\n");
}

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 int scenes, std::uint64_t seed) {
  RunConfig cfg = load_config(config_path);
  if (scenes > 0) cfg.gen.scenes = scenes;
  generate_dataset(out, cfg.gen, seed, cfg.to_json_text());
  std::printf("wrote %d scenes to %s\n", cfg.gen.scenes, out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& out) {
  RunConfig cfg = load_config(config_path);
  const auto scene_dirs = dataset_scene_dirs(data);
  if (scene_dirs.empty()) throw Error::data("train: no scenes found in " + data);
  std::vector<Scene> dataset;
  dataset.reserve(scene_dirs.size());
  for (const auto& d : scene_dirs) dataset.push_back(read_scene(d));

  fs::create_directories(out);
  write_text_file(out + "/config.json", cfg.to_json_text());

  Backbone model(cfg.model);
  model.init_params(cfg.train.seed);
  const Schedule schedule = cfg.make_schedule();

  const auto checkpoint_name = [&](int step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "/ckpt_%06d.mxk", step);
    return out + buf;
  };
  const TrainResult result =
      train(model, dataset, schedule, cfg.train, cfg.codec,
            [&](int step) { model.save_checkpoint(checkpoint_name(step)); });

  model.save_checkpoint(out + "/ckpt_final.mxk");
  std::ofstream csv(out + "/loss.csv");
  csv << "step,task,loss\n";
  for (const auto& rec : result.trace)
    csv << rec.step << "," << task_name(rec.task) << "," << std::setprecision(17)
        << rec.loss << "\n";
  std::printf("trained %d steps on %zu scenes; run directory: %s\n",
              cfg.train.steps, dataset.size(), out.c_str());
  return 0;
}

Scene load_single_scene(const std::string& dir) {
  const auto dirs = dataset_scene_dirs(dir);
  if (dirs.size() != 1)
    throw Error::data("expected a single scene directory, got " +
                      std::to_string(dirs.size()) + " in " + dir);
  return read_scene(dirs[0]);
}

int cmd_infer(const std::string& task, const std::string& config_path,
              const std::string& ckpt, const std::string& scene_dir,
              const std::string& out, bool with_depth, bool gt_poses,
              std::uint64_t seed, int inputs) {
  RunConfig cfg = load_config(config_path);
  warn_if_uncond_untrained(cfg);
  const Backbone model = Backbone::load_checkpoint(ckpt);
  const TaskContext ctx = make_context(cfg, model, seed);
  Scene scene = load_single_scene(scene_dir);
  const int n_views = static_cast<int>(scene.views.size());
  if (n_views == 0) throw Error::data("infer: scene has no views");

  if (task == "pose") {
    std::vector<Image> images;
    std::vector<DepthMap> depths;
    for (const auto& v : scene.views) {
      images.push_back(v.rgb);
      if (v.has_depth) depths.push_back(v.depth);
    }
    if (with_depth && static_cast<int>(depths.size()) != n_views)
      throw Error::data("infer pose: --with-depth requires depth on every view");
    const auto cams = estimate_poses(ctx, images, with_depth ? &depths : nullptr);
    Scene pred = scene;
    for (int v = 0; v < n_views; ++v) pred.views[v].camera = cams[v];
    write_scene(out, pred);
    std::printf("wrote pose predictions for %d views to %s\n", n_views, out.c_str());
    return 0;
  }

  if (task == "depth") {
    std::vector<PosedImage> posed;
    for (const auto& v : scene.views) posed.push_back({v.rgb, v.camera});
    const auto depths = predict_depth(ctx, posed);
    Scene pred = scene;
    for (int v = 0; v < n_views; ++v) {
      pred.views[v].depth = depths[v];
      pred.views[v].has_depth = true;
    }
    write_scene(out, pred);
    std::printf("wrote depth predictions for %d views to %s\n", n_views, out.c_str());
    return 0;
  }

  if (task == "nvs") {
    if (n_views < 2) throw Error::data("infer nvs: need at least 2 views");
    // Conditions: all views but the last; the last view is re-synthesized.
    std::vector<PosedImage> posed;
    for (int v = 0; v + 1 < n_views; ++v)
      posed.push_back({scene.views[v].rgb, scene.views[v].camera});
    const auto imgs = synthesize_views(ctx, posed, {scene.views[n_views - 1].camera});
    Scene pred = scene;
    pred.views[n_views - 1].rgb = imgs[0];
    write_scene(out, pred);
    std::printf("synthesized view %d into %s\n", n_views - 1, out.c_str());
    return 0;
  }

  if (task == "complete") {
    const int k = inputs > 0 ? std::min(inputs, n_views) : 1;
    std::vector<Image> images;
    std::optional<std::vector<Camera>> poses;
    for (int v = 0; v < k; ++v) images.push_back(scene.views[v].rgb);
    if (gt_poses) {
      std::vector<Camera> cams;
      for (int v = 0; v < k; ++v) cams.push_back(scene.views[v].camera);
      poses = cams;
    }
    const ScenePackage pkg = complete_scene(ctx, images, poses, out, cfg.complete);
    std::printf("scene package with %zu views (%d key) at %s\n",
                pkg.cameras.size(), pkg.key_view_count, pkg.dir.c_str());
    return 0;
  }

  throw Error::usage("infer: unknown task '" + task + "'");
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::string& metrics_list, const std::string& out_csv) {
  const auto pred_dirs = dataset_scene_dirs(pred_dir);
  const auto gt_dirs = dataset_scene_dirs(gt_dir);
  if (pred_dirs.size() != gt_dirs.size())
    throw Error::data("eval: scene count mismatch between pred and gt");
  if (pred_dirs.empty()) throw Error::data("eval: no scenes found");

  bool want_pose = false, want_depth = false, want_image = false, want_pc = false;
  {
    std::stringstream ss(metrics_list);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "pose") want_pose = true;
      else if (item == "depth") want_depth = true;
      else if (item == "image") want_image = true;
      else if (item == "pointcloud") want_pc = true;
      else if (item == "all") want_pose = want_depth = want_image = want_pc = true;
      else if (!item.empty())
        throw Error::usage("eval: unknown metric '" + item + "'");
    }
  }

  std::ofstream csv(out_csv);
  if (!csv) throw Error::data("eval: cannot write " + out_csv);
  // Column order is part of the interface; keep it stable.
  csv << "scene,rra15,ca01,abs_rel,log10,rms,delta1,delta2,delta3,rel,tau,psnr,"
         "ssim,pc_accuracy,pc_completeness,pc_overall\n";
  csv << std::setprecision(12);

  std::vector<double> sums(15, 0.0);
  std::vector<std::size_t> counts(15, 0);
  auto emit = [&](int col, double value) {
    csv << value;
    sums[col] += value;
    counts[col] += 1;
  };

  for (std::size_t s = 0; s < pred_dirs.size(); ++s) {
    const Scene pred = read_scene(pred_dirs[s]);
    const Scene gt = read_scene(gt_dirs[s]);
    if (pred.views.size() != gt.views.size())
      throw Error::data("eval: view count mismatch in scene " + pred_dirs[s]);
    csv << fs::path(pred_dirs[s]).filename().string();

    std::vector<Camera> pred_cams, gt_cams;
    for (const auto& v : pred.views) pred_cams.push_back(v.camera);
    for (const auto& v : gt.views) gt_cams.push_back(v.camera);

    csv << ",";
    if (want_pose && pred_cams.size() >= 2)
      emit(0, relative_rotation_accuracy(pred_cams, gt_cams));
    csv << ",";
    if (want_pose && pred_cams.size() >= 2)
      emit(1, camera_center_accuracy(pred_cams, gt_cams));

    DepthMetrics dm{};
    bool have_depth = false;
    if (want_depth) {
      double weight = 0.0;
      DepthMetrics acc{};
      for (std::size_t v = 0; v < pred.views.size(); ++v) {
        if (!pred.views[v].has_depth || !gt.views[v].has_depth) continue;
        try {
          const DepthMetrics one =
              depth_metrics(pred.views[v].depth, gt.views[v].depth);
          acc.abs_rel += one.abs_rel;
          acc.log10 += one.log10;
          acc.rms += one.rms;
          acc.delta1 += one.delta1;
          acc.delta2 += one.delta2;
          acc.delta3 += one.delta3;
          acc.rel += one.rel;
          acc.tau += one.tau;
          weight += 1.0;
        } catch (const Error&) {
          // disjoint masks on this view: skip it
        }
      }
      if (weight > 0) {
        dm = acc;
        for (double* f : {&dm.abs_rel, &dm.log10, &dm.rms, &dm.delta1, &dm.delta2,
                          &dm.delta3, &dm.rel, &dm.tau})
          *f /= weight;
        have_depth = true;
      }
    }
    const double* depth_fields[] = {&dm.abs_rel, &dm.log10, &dm.rms, &dm.delta1,
                                    &dm.delta2, &dm.delta3, &dm.rel, &dm.tau};
    for (int f = 0; f < 8; ++f) {
      csv << ",";
      if (have_depth) emit(2 + f, *depth_fields[f]);
    }

    double psnr_mean = 0, ssim_mean = 0;
    if (want_image) {
      for (std::size_t v = 0; v < pred.views.size(); ++v) {
        psnr_mean += psnr(pred.views[v].rgb, gt.views[v].rgb);
        ssim_mean += ssim(pred.views[v].rgb, gt.views[v].rgb);
      }
      psnr_mean /= static_cast<double>(pred.views.size());
      ssim_mean /= static_cast<double>(pred.views.size());
    }
    csv << ",";
    if (want_image) emit(10, psnr_mean);
    csv << ",";
    if (want_image) emit(11, ssim_mean);

    bool have_pc = false;
    PointCloudMetrics pc{};
    if (want_pc) {
      const std::string pred_ply = pred_dirs[s] + "/init.ply";
      const std::string gt_ply = gt_dirs[s] + "/init.ply";
      if (fs::exists(pred_ply) && fs::exists(gt_ply)) {
        pc = pointcloud_metrics(read_ply(pred_ply), read_ply(gt_ply));
        have_pc = true;
      }
    }
    const double* pc_fields[] = {&pc.accuracy, &pc.completeness, &pc.overall};
    for (int f = 0; f < 3; ++f) {
      csv << ",";
      if (have_pc) emit(12 + f, *pc_fields[f]);
    }
    csv << "\n";
  }

  csv << "mean";
  for (int col = 0; col < 15; ++col) {
    csv << ",";
    if (counts[col] > 0) csv << sums[col] / static_cast<double>(counts[col]);
  }
  csv << "\n";
  std::printf("wrote %s\n", out_csv.c_str());
  return 0;
}

int cmd_fuse(const std::string& config_path, const std::string& scene_dir,
             const std::string& statistic) {
  RunConfig cfg = load_config(config_path);
  if (statistic == "mean")
    cfg.fusion_statistic = FusionStatistic::mean;
  else if (statistic == "median")
    cfg.fusion_statistic = FusionStatistic::median;
  else if (!statistic.empty())
    throw Error::usage("fuse: statistic must be mean or median");

  const Scene scene = load_single_scene(scene_dir);
  std::vector<DepthMap> depths;
  std::vector<Camera> cams;
  std::vector<Image> rgbs;
  for (const auto& v : scene.views) {
    if (!v.has_depth) continue;
    depths.push_back(v.depth);
    cams.push_back(v.camera);
    rgbs.push_back(v.rgb);
  }
  if (depths.size() < 2) throw Error::data("fuse: need >= 2 views with depth");

  auto filtered = geometric_filter(depths, cams, cfg.fusion);
  auto fused = geometric_fusion(filtered, cams, cfg.fusion_statistic, cfg.fusion);
  for (std::size_t v = 0; v < fused.size(); ++v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "/view_%03d.fused.pfm", static_cast<int>(v));
    write_pfm(scene_dir + buf, fused[v]);
    std::snprintf(buf, sizeof(buf), "/view_%03d.fused.pgm", static_cast<int>(v));
    write_pgm_mask(scene_dir + buf, fused[v]);
  }
  PointCloud cloud;
  for (std::size_t v = 0; v < fused.size(); ++v) {
    const PointCloud pc = backproject(fused[v], cams[v], &rgbs[v]);
    cloud.points.insert(cloud.points.end(), pc.points.begin(), pc.points.end());
    cloud.colors.insert(cloud.colors.end(), pc.colors.begin(), pc.colors.end());
  }
  if (cloud.points.empty()) throw Error::data("fuse: no valid depth survived");
  write_ply(scene_dir + "/init.ply", cloud);
  std::printf("fused %zu views; wrote init.ply with %zu points\n", fused.size(),
              cloud.size());
  return 0;
}

int cmd_traj_orbit(int n, double elevation, double distance, double fov, int res,
                   const std::string& out) {
  const Trajectory traj = orbit_trajectory(n, elevation, distance, fov, res);
  write_text_file(out, trajectory_to_json(traj).dump(2) + "\n");
  std::printf("wrote orbit trajectory with %d cameras to %s\n", n, out.c_str());
  return 0;
}

int cmd_traj_spline(const std::string& scene_dir, int multiplier, int base_density,
                    const std::string& out) {
  const Scene scene = load_single_scene(scene_dir);
  std::vector<Camera> keys;
  for (const auto& v : scene.views) keys.push_back(v.camera);
  const Trajectory traj = spline_trajectory(keys, multiplier, base_density);
  write_text_file(out, trajectory_to_json(traj).dump(2) + "\n");
  std::printf("wrote spline trajectory with %zu cameras to %s\n",
              traj.cameras.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matrixkit - unified multi-modal diffusion photogrammetry toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "worker threads (0 = all cores; MATRIXKIT_THREADS overrides)");

  std::string config_path, out_dir, data_dir, scene_dir, ckpt, metrics = "all";
  std::string pred_dir, gt_dir, out_csv = "metrics.csv", statistic, traj_out;
  int scenes = 0, inputs = 0;
  std::uint64_t seed = 0;
  bool with_depth = false, gt_poses = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--scenes", scenes, "number of scenes (overrides config)");
  gen->add_option("--seed", seed, "dataset seed");

  auto* tr = app.add_subcommand("train", "train the diffusion model");
  tr->add_option("--config", config_path, "run config JSON");
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", out_dir, "run directory")->required();

  auto* infer = app.add_subcommand("infer", "run a downstream task");
  std::string task;
  infer->add_option("task", task, "pose|nvs|depth|complete")->required();
  infer->add_option("--config", config_path, "run config JSON");
  infer->add_option("--ckpt", ckpt, "model checkpoint")->required();
  infer->add_option("--scene", scene_dir, "input scene directory")->required();
  infer->add_option("--out", out_dir, "output package directory")->required();
  infer->add_flag("--with-depth", with_depth, "condition pose estimation on depth");
  infer->add_flag("--gt-poses", gt_poses, "use the scene's poses instead of estimating");
  infer->add_option("--inputs", inputs, "input view count for `complete`");
  infer->add_option("--seed", seed, "sampling seed");

  auto* ev = app.add_subcommand("eval", "compute metrics between two datasets");
  ev->add_option("--pred", pred_dir, "prediction dataset/scene")->required();
  ev->add_option("--gt", gt_dir, "ground-truth dataset/scene")->required();
  ev->add_option("--metrics", metrics, "comma list: pose,depth,image,pointcloud,all");
  ev->add_option("--out", out_csv, "output CSV path");

  auto* fu = app.add_subcommand("fuse", "geometric depth filtering and fusion");
  fu->add_option("--config", config_path, "run config JSON");
  fu->add_option("--scene", scene_dir, "scene directory")->required();
  fu->add_option("--statistic", statistic, "mean|median");

  auto* traj = app.add_subcommand("traj", "write camera trajectories");
  traj->require_subcommand(1);
  auto* orbit = traj->add_subcommand("orbit", "orbital look-at trajectory");
  int orbit_n = 80, traj_res = 32, multiplier = 3, base_density = 8;
  double elevation = 20.0, distance = 1.3, fov = 50.0;
  orbit->add_option("--n", orbit_n, "camera count");
  orbit->add_option("--elevation", elevation, "elevation in degrees");
  orbit->add_option("--distance", distance, "distance to the origin");
  orbit->add_option("--fov", fov, "field of view in degrees");
  orbit->add_option("--resolution", traj_res, "camera raster");
  orbit->add_option("--out", traj_out, "output trajectory.json")->required();
  auto* spline = traj->add_subcommand("spline", "spline through scene cameras");
  spline->add_option("--scene", scene_dir, "scene directory with key cameras")->required();
  spline->add_option("--multiplier", multiplier, "density multiplier");
  spline->add_option("--base", base_density, "base density");
  spline->add_option("--out", traj_out, "output trajectory.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  set_threads(threads);
  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, scenes, seed);
    if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir);
    if (infer->parsed())
      return cmd_infer(task, config_path, ckpt, scene_dir, out_dir, with_depth,
                       gt_poses, seed, inputs);
    if (ev->parsed()) return cmd_eval(pred_dir, gt_dir, metrics, out_csv);
    if (fu->parsed()) return cmd_fuse(config_path, scene_dir, statistic);
    if (orbit->parsed())
      return cmd_traj_orbit(orbit_n, elevation, distance, fov, traj_res, traj_out);
    if (spline->parsed())
      return cmd_traj_spline(scene_dir, multiplier, base_density, traj_out);
  } catch (const Error& e) {
    const char* kind = e.kind() == ErrorKind::usage
                           ? "usage"
                           : (e.kind() == ErrorKind::data ? "data" : "numeric");
    std::cerr << "error[" << kind << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error[data]: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
