#include "matrixkit/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "matrixkit/error.hpp"
#include "matrixkit/io.hpp"
#include "matrixkit/jsonio.hpp"

namespace matrixkit {

namespace {

Camera identity_camera(int res, double fov_deg) {
  Camera cam;
  cam.focal = focal_from_fov_deg(fov_deg, res);
  cam.principal_point = Vec2(0.5 * res, 0.5 * res);
  cam.width = res;
  cam.height = res;
  return cam;
}

ViewMap pose_condition(const TaskContext& ctx, const Camera& cam, int view_id) {
  const int r = ctx.model->config().ray_res;
  return encode_raymap(camera_to_raymap(cam, r, r), view_id, ctx.codec);
}

void check_rgb(const TaskContext& ctx, const Image& img) {
  const int r = ctx.model->config().rgb_res;
  if (img.width != r || img.height != r || img.channels != 3)
    throw Error::data("input image resolution does not match the model");
}

}  // namespace

std::vector<Camera> estimate_poses(const TaskContext& ctx,
                                   const std::vector<Image>& images,
                                   const std::vector<DepthMap>* known_depths) {
  const ModelConfig& cfg = ctx.model->config();
  const int n = static_cast<int>(images.size());
  if (n < 2) throw Error::data("estimate_poses: need at least 2 images");
  if (n > cfg.max_views)
    throw Error::data("estimate_poses: more images than the view budget");
  if (known_depths && static_cast<int>(known_depths->size()) != n)
    throw Error::data("estimate_poses: depth/image count mismatch");

  const Camera reference = identity_camera(cfg.rgb_res, ctx.fov_deg);

  SampleRequest req;
  for (int v = 0; v < n; ++v) {
    check_rgb(ctx, images[v]);
    req.condition.push_back(encode_rgb_map(images[v], v));
  }
  req.condition.push_back(pose_condition(ctx, reference, 0));
  if (known_depths) {
    // Hybrid conditioning: measured depth sharpens the scale (RGB + Depth).
    for (int v = 0; v < n; ++v)
      req.condition.push_back(encode_depth_map((*known_depths)[v], v, ctx.codec));
  }
  for (int v = 1; v < n; ++v) req.targets.push_back({v, Modality::pose});

  Rng rng = Rng::stream(ctx.seed, 0x905E);
  const auto maps = sample(*ctx.model, req, ctx.schedule, ctx.guidance, rng);

  std::vector<Camera> out;
  out.reserve(n);
  out.push_back(reference);  // conditioned, returned verbatim
  RecoverOptions opts;
  opts.focal_hint = reference.focal * cfg.ray_res / cfg.rgb_res;
  for (const auto& m : maps) {
    const Camera rec = recover_camera(decode_raymap(m, cfg.ray_res, ctx.codec), opts);
    out.push_back(rec.rescaled(cfg.rgb_res, cfg.rgb_res));
  }
  return out;
}

namespace {

// Shared chunked synthesis: conditions are replicated into every chunk and
// targets partitioned round-robin over the remaining view slots.
std::vector<Image> synthesize_chunked(const TaskContext& ctx,
                                      const std::vector<PosedImage>& posed,
                                      const std::vector<Camera>& target_cams,
                                      std::uint64_t salt) {
  const ModelConfig& cfg = ctx.model->config();
  const int n_cond = static_cast<int>(posed.size());
  if (n_cond < 1) throw Error::data("synthesize_views: need at least one posed image");
  if (target_cams.empty()) throw Error::data("synthesize_views: nothing to generate");
  if (n_cond >= cfg.max_views)
    throw Error::data("synthesize_views: no view slots left for targets");

  const int capacity = cfg.max_views - n_cond;
  const int n_targets = static_cast<int>(target_cams.size());
  const int n_chunks = (n_targets + capacity - 1) / capacity;

  std::vector<Image> out(n_targets);
  for (int chunk = 0; chunk < n_chunks; ++chunk) {
    std::vector<int> ids;
    for (int i = chunk; i < n_targets; i += n_chunks) ids.push_back(i);
    if (ids.empty()) continue;

    std::vector<Camera> cams;
    for (const auto& p : posed) cams.push_back(p.camera);
    for (int i : ids) cams.push_back(target_cams[i]);
    cams = normalize_cameras(cams);

    SampleRequest req;
    for (int v = 0; v < n_cond; ++v) {
      check_rgb(ctx, posed[v].rgb);
      req.condition.push_back(encode_rgb_map(posed[v].rgb, v));
    }
    for (int v = 0; v < static_cast<int>(cams.size()); ++v)
      req.condition.push_back(pose_condition(ctx, cams[v], v));
    for (int k = 0; k < static_cast<int>(ids.size()); ++k)
      req.targets.push_back({n_cond + k, Modality::rgb});

    Rng rng = Rng::stream(ctx.seed, 0x4E55, salt, static_cast<std::uint64_t>(chunk));
    const auto maps = sample(*ctx.model, req, ctx.schedule, ctx.guidance, rng);
    for (std::size_t k = 0; k < ids.size(); ++k)
      out[ids[k]] = decode_rgb_map(maps[k], cfg.rgb_res);
  }
  return out;
}

}  // namespace

std::vector<Image> synthesize_views(const TaskContext& ctx,
                                    const std::vector<PosedImage>& posed,
                                    const std::vector<Camera>& target_cams) {
  return synthesize_chunked(ctx, posed, target_cams, 0);
}

std::vector<DepthMap> predict_depth(const TaskContext& ctx,
                                    const std::vector<PosedImage>& posed) {
  const ModelConfig& cfg = ctx.model->config();
  const int n = static_cast<int>(posed.size());
  if (n < 1) throw Error::data("predict_depth: need at least one posed image");

  std::vector<DepthMap> out(n);
  for (int start = 0; start < n; start += cfg.max_views) {
    const int count = std::min(cfg.max_views, n - start);
    std::vector<Camera> cams;
    for (int v = 0; v < count; ++v) cams.push_back(posed[start + v].camera);
    cams = normalize_cameras(cams);

    SampleRequest req;
    for (int v = 0; v < count; ++v) {
      check_rgb(ctx, posed[start + v].rgb);
      req.condition.push_back(encode_rgb_map(posed[start + v].rgb, v));
      req.condition.push_back(pose_condition(ctx, cams[v], v));
      req.targets.push_back({v, Modality::depth});
    }
    Rng rng = Rng::stream(ctx.seed, 0xDE87, static_cast<std::uint64_t>(start));
    const auto maps = sample(*ctx.model, req, ctx.schedule, ctx.guidance, rng);
    for (int v = 0; v < count; ++v) {
      out[start + v] = decode_depth_map(maps[v], cfg.depth_res, ctx.codec);
      if (out[start + v].valid_count() == 0)
        std::fprintf(stderr,
                     "warning: predict_depth produced an all-invalid mask for view %d\n",
                     start + v);
    }
  }
  return out;
}

// ---- Scene completion ----

namespace {

std::string view_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03d", i);
  return buf;
}

struct StageLog {
  std::string path;
  std::set<std::string> done;

  explicit StageLog(const std::string& dir) : path(dir + "/stages.log") {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      const auto cut = line.find(' ');
      done.insert(cut == std::string::npos ? line : line.substr(0, cut));
    }
  }
  bool is_done(const std::string& stage) const { return done.count(stage) > 0; }
  void mark(const std::string& stage, const std::string& note = "") {
    std::ofstream out(path, std::ios::app);
    out << stage << (note.empty() ? "" : " " + note) << "\n";
    done.insert(stage);
  }
};

// Nearest key views (by camera center) used to condition a chunk of targets.
std::vector<int> nearest_views(const std::vector<Camera>& keys, const Camera& target,
                               int count) {
  std::vector<std::pair<double, int>> by_dist;
  for (std::size_t i = 0; i < keys.size(); ++i)
    by_dist.push_back({(keys[i].center() - target.center()).norm(), static_cast<int>(i)});
  std::sort(by_dist.begin(), by_dist.end());
  std::vector<int> out;
  for (int i = 0; i < count && i < static_cast<int>(by_dist.size()); ++i)
    out.push_back(by_dist[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

// Interpolation views conditioned on their nearest key views, chunked.
std::vector<Image> synthesize_interpolations(const TaskContext& ctx,
                                             const std::vector<PosedImage>& keys,
                                             const std::vector<Camera>& targets,
                                             std::uint64_t salt) {
  const ModelConfig& cfg = ctx.model->config();
  const int n_cond = std::min<int>(static_cast<int>(keys.size()), cfg.max_views - 1);
  const int capacity = cfg.max_views - n_cond;
  std::vector<Image> out(targets.size());
  for (std::size_t start = 0; start < targets.size();
       start += static_cast<std::size_t>(capacity)) {
    const std::size_t count = std::min<std::size_t>(capacity, targets.size() - start);
    const auto cond_ids = nearest_views(
        [&] {
          std::vector<Camera> cams;
          for (const auto& k : keys) cams.push_back(k.camera);
          return cams;
        }(),
        targets[start], n_cond);
    std::vector<PosedImage> cond;
    for (int id : cond_ids) cond.push_back(keys[id]);
    std::vector<Camera> chunk_targets(targets.begin() + start,
                                      targets.begin() + start + count);
    const auto imgs = synthesize_chunked(ctx, cond, chunk_targets,
                                         salt + 0x100 + start);
    for (std::size_t k = 0; k < count; ++k) out[start + k] = imgs[k];
  }
  return out;
}

}  // namespace

ScenePackage complete_scene(const TaskContext& ctx, const std::vector<Image>& images,
                            const std::optional<std::vector<Camera>>& poses,
                            const std::string& out_dir,
                            const CompleteSceneOptions& opts) {
  namespace fs = std::filesystem;
  if (images.empty()) throw Error::data("complete_scene: need at least one image");
  const ModelConfig& cfg = ctx.model->config();
  fs::create_directories(out_dir);
  StageLog log(out_dir);

  const int k = static_cast<int>(images.size());
  const bool monocular = k == 1;

  ScenePackage pkg;
  pkg.dir = out_dir;

  std::vector<Camera> input_cams;
  std::vector<Image> key_rgb;
  std::vector<DepthMap> key_depth;

  // ---- Stage: poses of the input views. ----
  try {
    if (log.is_done("poses")) {
      input_cams = camera_list_from_json(
          Json::parse(read_text_file(out_dir + "/poses.json")).at("cameras"));
    } else if (poses) {
      input_cams = *poses;
      Json j;
      j["schema_version"] = 1;
      j["cameras"] = camera_list_to_json(input_cams);
      write_text_file(out_dir + "/poses.json", j.dump(2) + "\n");
      log.mark("poses", "skipped (ground-truth poses provided)");
    } else if (monocular) {
      input_cams = {identity_camera(cfg.rgb_res, ctx.fov_deg)};
      Json j;
      j["schema_version"] = 1;
      j["cameras"] = camera_list_to_json(input_cams);
      write_text_file(out_dir + "/poses.json", j.dump(2) + "\n");
      log.mark("poses", "identity (monocular)");
    } else {
      input_cams = estimate_poses(ctx, images);
      Json j;
      j["schema_version"] = 1;
      j["cameras"] = camera_list_to_json(input_cams);
      write_text_file(out_dir + "/poses.json", j.dump(2) + "\n");
      log.mark("poses", "estimated");
    }
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("complete_scene [poses]: ") + e.what());
  }
  if (static_cast<int>(input_cams.size()) != k)
    throw Error::data("complete_scene: pose count does not match image count");

  // ---- Stage: key views (monocular synthesizes an orbit of them). ----
  std::vector<Camera> key_cams;
  try {
    if (monocular) {
      const Camera& cam0 = input_cams[0];
      const Vec3 target = cam0.center() + cam0.forward() * cam0.center().norm();
      const Vec3 w = (-cam0.rotation.row(1).transpose()).normalized();  // camera up
      const double dist = (cam0.center() - target).norm();
      const Vec3 radial = cam0.center() - target;
      const double elevation =
          std::asin(std::clamp(radial.dot(w) / dist, -1.0, 1.0)) * 180.0 /
          3.14159265358979323846;
      // Phase the orbit so camera 0 coincides with the input view (same
      // basis convention as orbit_trajectory), then pin it exactly:
      // conditioned views are never resampled.
      Vec3 a = std::abs(w.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
      a = (a - w * w.dot(a)).normalized();
      const Vec3 b = w.cross(a);
      const double phase =
          std::atan2(radial.dot(b), radial.dot(a)) * 180.0 / 3.14159265358979323846;
      Trajectory orbit = orbit_trajectory(opts.key_views, elevation, dist,
                                          ctx.fov_deg, cfg.rgb_res, w, phase, target);
      orbit.cameras[0] = cam0;
      key_cams = orbit.cameras;

      if (log.is_done("key_rgb")) {
        key_rgb.resize(opts.key_views);
        for (int v = 0; v < opts.key_views; ++v)
          key_rgb[v] = read_png(out_dir + "/" + view_name(v) + ".png");
      } else {
        key_rgb.resize(opts.key_views);
        key_rgb[0] = images[0];
        std::vector<Camera> targets(key_cams.begin() + 1, key_cams.end());
        const auto synth =
            synthesize_views(ctx, {{images[0], key_cams[0]}}, targets);
        for (int v = 1; v < opts.key_views; ++v) key_rgb[v] = synth[v - 1];
        for (int v = 0; v < opts.key_views; ++v)
          write_png(out_dir + "/" + view_name(v) + ".png", key_rgb[v]);
        log.mark("key_rgb");
      }
    } else {
      key_cams = input_cams;
      key_rgb = images;
      if (!log.is_done("key_rgb")) {
        for (int v = 0; v < k; ++v)
          write_png(out_dir + "/" + view_name(v) + ".png", key_rgb[v]);
        log.mark("key_rgb", "input views");
      }
    }
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("complete_scene [key_rgb]: ") + e.what());
  }
  const int n_keys = static_cast<int>(key_cams.size());

  // ---- Stage: key-view depth. ----
  try {
    if (log.is_done("key_depth")) {
      key_depth.resize(n_keys);
      for (int v = 0; v < n_keys; ++v) {
        key_depth[v] = read_pfm(out_dir + "/" + view_name(v) + ".pfm");
        read_pgm_mask(out_dir + "/" + view_name(v) + ".pgm", key_depth[v]);
      }
    } else {
      std::vector<PosedImage> posed;
      for (int v = 0; v < n_keys; ++v) posed.push_back({key_rgb[v], key_cams[v]});
      key_depth = predict_depth(ctx, posed);
      for (int v = 0; v < n_keys; ++v) {
        write_pfm(out_dir + "/" + view_name(v) + ".pfm", key_depth[v]);
        write_pgm_mask(out_dir + "/" + view_name(v) + ".pgm", key_depth[v]);
      }
      log.mark("key_depth");
    }
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("complete_scene [key_depth]: ") + e.what());
  }

  // ---- Stage: dense trajectory + interpolated views. ----
  std::vector<Image> interp_rgb;
  try {
    if (monocular) {
      // Dense ring on the same orbit as the key views, phase-shifted by half
      // a key gap so interpolated views interleave with them.
      const Camera& cam0 = input_cams[0];
      const Vec3 target = cam0.center() + cam0.forward() * cam0.center().norm();
      const Vec3 w = (-cam0.rotation.row(1).transpose()).normalized();
      const Vec3 radial = cam0.center() - target;
      const double dist = radial.norm();
      const double elevation =
          std::asin(std::clamp(radial.dot(w) / dist, -1.0, 1.0)) * 180.0 /
          3.14159265358979323846;
      Vec3 a = std::abs(w.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
      a = (a - w * w.dot(a)).normalized();
      const Vec3 b = w.cross(a);
      const double phase =
          std::atan2(radial.dot(b), radial.dot(a)) * 180.0 / 3.14159265358979323846 +
          180.0 / opts.key_views;
      pkg.trajectory = orbit_trajectory(opts.trajectory_views, elevation, dist,
                                        ctx.fov_deg, cfg.rgb_res, w, phase, target);
    } else {
      const int base = std::max(2, opts.trajectory_views / opts.spline_multiplier);
      pkg.trajectory = spline_trajectory(key_cams, opts.spline_multiplier, base);
    }
    write_text_file(out_dir + "/trajectory.json",
                    trajectory_to_json(pkg.trajectory).dump(2) + "\n");

    // Skip trajectory cameras that coincide with a key view.
    std::vector<Camera> targets;
    for (const auto& cam : pkg.trajectory.cameras) {
      double nearest = 1e18;
      for (const auto& key : key_cams)
        nearest = std::min(nearest, (cam.center() - key.center()).norm());
      if (nearest > 1e-9) targets.push_back(cam);
    }

    if (log.is_done("interp")) {
      interp_rgb.resize(targets.size());
      for (std::size_t v = 0; v < targets.size(); ++v)
        interp_rgb[v] =
            read_png(out_dir + "/" + view_name(n_keys + static_cast<int>(v)) + ".png");
      key_cams.insert(key_cams.end(), targets.begin(), targets.end());
    } else {
      std::vector<PosedImage> keys;
      for (int v = 0; v < n_keys; ++v) keys.push_back({key_rgb[v], key_cams[v]});
      interp_rgb = synthesize_interpolations(ctx, keys, targets, 7);
      for (std::size_t v = 0; v < targets.size(); ++v)
        write_png(out_dir + "/" + view_name(n_keys + static_cast<int>(v)) + ".png",
                  interp_rgb[v]);
      log.mark("interp");
      key_cams.insert(key_cams.end(), targets.begin(), targets.end());
    }
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("complete_scene [interp]: ") + e.what());
  }

  // ---- Stage: fused initialization cloud. ----
  try {
    if (!log.is_done("fuse")) {
      std::vector<Camera> depth_cams(key_cams.begin(), key_cams.begin() + n_keys);
      pkg.init_cloud = init_point_cloud(key_depth, depth_cams, &key_rgb,
                                        opts.fusion_statistic, opts.fusion);
      write_ply(out_dir + "/init.ply", pkg.init_cloud);
      log.mark("fuse");
    } else {
      pkg.init_cloud = read_ply(out_dir + "/init.ply");
    }
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("complete_scene [fuse]: ") + e.what());
  }

  // ---- Stage: final package (synthscene-compatible scene directory). ----
  try {
    if (!log.is_done("package")) {
      Scene scene;
      scene.seed = ctx.seed;
      scene.normalization = NormalizationSpec{};
      for (std::size_t v = 0; v < key_cams.size(); ++v) {
        ViewBundle b;
        b.view_id = static_cast<int>(v);
        b.camera = key_cams[v];
        if (static_cast<int>(v) < n_keys) {
          b.rgb = key_rgb[v];
          b.depth = key_depth[v];
          b.has_depth = true;
        } else {
          b.rgb = interp_rgb[v - n_keys];
          b.has_depth = false;
        }
        scene.views.push_back(std::move(b));
      }
      write_scene(out_dir, scene);
      log.mark("package");
    }
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("complete_scene [package]: ") + e.what());
  }

  pkg.cameras = key_cams;
  pkg.key_view_count = n_keys;
  return pkg;
}

}  // namespace matrixkit
