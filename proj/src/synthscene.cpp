#include "matrixkit/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "matrixkit/error.hpp"
#include "matrixkit/io.hpp"
#include "matrixkit/jsonio.hpp"
#include "matrixkit/parallel.hpp"

namespace matrixkit {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRayEps = 1e-9;

struct Hit {
  double t = std::numeric_limits<double>::max();
  Vec3 normal = Vec3::Zero();
  int prim = -1;
};

bool intersect_sphere(const Primitive& p, const Vec3& o, const Vec3& d, Hit* hit) {
  const Vec3 oc = o - p.center;
  const double r = p.size.x();
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - c;
  if (disc < 0) return false;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= kRayEps) t = -b + sq;
  if (t <= kRayEps || t >= hit->t) return false;
  hit->t = t;
  hit->normal = (o + t * d - p.center) / r;
  return true;
}

bool intersect_box(const Primitive& p, const Vec3& o, const Vec3& d, Hit* hit) {
  const Vec3 ol = p.rotation.transpose() * (o - p.center);
  const Vec3 dl = p.rotation.transpose() * d;
  double tmin = -std::numeric_limits<double>::max();
  double tmax = std::numeric_limits<double>::max();
  int axis = 0;
  for (int i = 0; i < 3; ++i) {
    const double inv = 1.0 / dl(i);  // IEEE inf handles parallel rays
    double t1 = (-p.size(i) - ol(i)) * inv;
    double t2 = (p.size(i) - ol(i)) * inv;
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > tmin) {
      tmin = t1;
      axis = i;
    }
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return false;
  }
  const double t = tmin > kRayEps ? tmin : tmax;
  if (t <= kRayEps || t >= hit->t) return false;
  Vec3 nl = Vec3::Zero();
  nl(axis) = dl(axis) > 0 ? -1.0 : 1.0;
  hit->t = t;
  hit->normal = p.rotation * nl;
  return true;
}

bool intersect_plane(const Primitive& p, const Vec3& o, const Vec3& d, Hit* hit) {
  const Vec3 ol = p.rotation.transpose() * (o - p.center);
  const Vec3 dl = p.rotation.transpose() * d;
  if (std::abs(dl.z()) < 1e-12) return false;
  const double t = -ol.z() / dl.z();
  if (t <= kRayEps || t >= hit->t) return false;
  const Vec3 q = ol + t * dl;
  if (std::abs(q.x()) > p.size.x() || std::abs(q.y()) > p.size.y()) return false;
  hit->t = t;
  hit->normal = p.rotation * Vec3(0, 0, dl.z() > 0 ? -1.0 : 1.0);
  return true;
}

bool trace(const SceneSpec& spec, const Vec3& o, const Vec3& d, Hit* hit) {
  for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
    const Primitive& p = spec.primitives[i];
    bool h = false;
    switch (p.kind) {
      case PrimitiveKind::sphere: h = intersect_sphere(p, o, d, hit); break;
      case PrimitiveKind::box: h = intersect_box(p, o, d, hit); break;
      case PrimitiveKind::plane: h = intersect_plane(p, o, d, hit); break;
    }
    if (h) hit->prim = static_cast<int>(i);
  }
  return hit->prim >= 0;
}

Mat3 random_rotation(Rng& rng) {
  // Uniform-ish rotation from a random axis + angle; exactness of the
  // distribution is irrelevant here, determinism is not.
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  while (axis.norm() < 1e-6) axis = Vec3(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  const double angle = rng.uniform(0.0, 2.0 * kPi);
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

double primitive_bound_radius(const Primitive& p) {
  switch (p.kind) {
    case PrimitiveKind::sphere: return p.size.x();
    case PrimitiveKind::box: return p.size.norm();
    case PrimitiveKind::plane: return std::hypot(p.size.x(), p.size.y());
  }
  return p.size.norm();
}

}  // namespace

SceneSpec sample_scene(std::uint64_t seed, const SceneGenConfig& cfg) {
  if (cfg.min_primitives < 1 || cfg.max_primitives < cfg.min_primitives)
    throw Error::data("sample_scene: bad primitive count range");
  Rng rng = Rng::stream(seed, 0xA11CE);
  SceneSpec spec;
  spec.seed = seed;
  spec.background = cfg.background;
  spec.ambient = cfg.ambient;

  const int count = cfg.min_primitives +
                    static_cast<int>(rng.uniform_int(
                        static_cast<std::uint64_t>(cfg.max_primitives - cfg.min_primitives + 1)));
  for (int i = 0; i < count; ++i) {
    Primitive p;
    const std::uint64_t k = rng.uniform_int(3);
    p.kind = k == 0 ? PrimitiveKind::sphere
                    : (k == 1 ? PrimitiveKind::box : PrimitiveKind::plane);
    p.size = Vec3(rng.uniform(cfg.min_size, cfg.max_size),
                  rng.uniform(cfg.min_size, cfg.max_size),
                  rng.uniform(cfg.min_size, cfg.max_size));
    if (p.kind == PrimitiveKind::sphere) p.size = Vec3::Constant(p.size.x());
    if (p.kind == PrimitiveKind::plane) p.size.z() = 0.0;
    p.rotation = random_rotation(rng);
    const double r = primitive_bound_radius(p);
    const double room = std::max(0.0, 1.0 - r);
    p.center = Vec3(rng.uniform(-room, room), rng.uniform(-room, room),
                    rng.uniform(-room, room));
    p.albedo = Vec3(rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95),
                    rng.uniform(0.2, 0.95));
    spec.primitives.push_back(p);
  }

  for (int i = 0; i < cfg.lights; ++i) {
    DirectionalLight l;
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    while (d.norm() < 1e-6) d = Vec3(rng.normal(), rng.normal(), rng.normal());
    l.direction = d.normalized();
    const double intensity = rng.uniform(0.4, 0.9);
    l.color = intensity * Vec3(rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0),
                               rng.uniform(0.7, 1.0));
    spec.lights.push_back(l);
  }
  return spec;
}

std::vector<Camera> sample_cameras(const CameraSamplerConfig& cfg, int n_views,
                                   std::uint64_t seed, int width, int height) {
  if (n_views < 1) throw Error::data("sample_cameras: n_views must be >= 1");
  Rng rng = Rng::stream(seed, 0xCA3);
  const double focal = focal_from_fov_deg(cfg.fov_deg, width);
  std::vector<Camera> cams;
  cams.reserve(n_views);
  for (int i = 0; i < n_views; ++i) {
    const double az = rng.uniform(cfg.azimuth_min_deg, cfg.azimuth_max_deg) * kPi / 180.0;
    const double el = rng.uniform(cfg.elevation_min_deg, cfg.elevation_max_deg) * kPi / 180.0;
    const double dist = rng.uniform(cfg.distance_min, cfg.distance_max);
    const Vec3 center(dist * std::cos(el) * std::cos(az),
                      dist * std::cos(el) * std::sin(az), dist * std::sin(el));
    cams.push_back(Camera::look_at(center, Vec3::Zero(), focal, width, height));
  }
  return cams;
}

void render(const SceneSpec& spec, const Camera& cam, int width, int height,
            Image* rgb, DepthMap* depth) {
  if (width < 8 || height < 8)
    throw Error::data("render: resolution must be at least 8x8");
  *rgb = Image(width, height, 3);
  *depth = DepthMap(width, height);

  const Vec3 origin = cam.center();
  const Mat3 rt = cam.rotation.transpose();
  const Camera cam_r = cam.rescaled(width, height);

  parallel_for(height, [&](std::int64_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < width; ++x) {
      const Vec3 dir_cam =
          Vec3((x + 0.5 - cam_r.principal_point.x()) / cam_r.focal,
               (y + 0.5 - cam_r.principal_point.y()) / cam_r.focal, 1.0)
              .normalized();
      const Vec3 d = rt * dir_cam;
      Hit hit;
      if (trace(spec, origin, d, &hit)) {
        const Primitive& p = spec.primitives[hit.prim];
        Vec3 n = hit.normal;
        if (n.dot(d) > 0) n = -n;  // face the viewer
        Vec3 shade = Vec3::Constant(spec.ambient);
        for (const auto& l : spec.lights)
          shade += std::max(0.0, n.dot(-l.direction)) * l.color;
        for (int c = 0; c < 3; ++c)
          rgb->at(y, x, c) = std::clamp(p.albedo(c) * shade(c), 0.0, 1.0);
        depth->at(y, x) = hit.t * dir_cam.z();  // camera-frame z
        depth->valid[depth->idx(y, x)] = 1;
      } else {
        for (int c = 0; c < 3; ++c) rgb->at(y, x, c) = spec.background(c);
      }
    }
  });
}

double scene_surface_distance(const SceneSpec& spec, const Vec3& p) {
  double best = std::numeric_limits<double>::max();
  for (const auto& prim : spec.primitives) {
    double d = best;
    const Vec3 pl = prim.rotation.transpose() * (p - prim.center);
    switch (prim.kind) {
      case PrimitiveKind::sphere:
        d = std::abs(pl.norm() - prim.size.x());
        break;
      case PrimitiveKind::box: {
        const Vec3 q = pl.cwiseAbs() - prim.size;
        const double outside = q.cwiseMax(0.0).norm();
        const double inside = std::min(0.0, q.maxCoeff());
        d = std::abs(outside + inside);
        break;
      }
      case PrimitiveKind::plane: {
        const double dx = std::max(0.0, std::abs(pl.x()) - prim.size.x());
        const double dy = std::max(0.0, std::abs(pl.y()) - prim.size.y());
        d = std::sqrt(dx * dx + dy * dy + pl.z() * pl.z());
        break;
      }
    }
    best = std::min(best, d);
  }
  return best;
}

void drop_mask_rectangles(DepthMap& d, double fraction, Rng& rng) {
  if (fraction <= 0) return;
  const std::size_t target =
      static_cast<std::size_t>(fraction * static_cast<double>(d.valid_count()));
  std::size_t removed = 0;
  int guard = 0;
  while (removed < target && guard++ < 256) {
    const int rw = std::max(1, static_cast<int>(rng.uniform(0.1, 0.35) * d.width));
    const int rh = std::max(1, static_cast<int>(rng.uniform(0.1, 0.35) * d.height));
    const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
        std::max(1, d.width - rw))));
    const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
        std::max(1, d.height - rh))));
    for (int y = y0; y < std::min(d.height, y0 + rh); ++y) {
      for (int x = x0; x < std::min(d.width, x0 + rw); ++x) {
        if (d.is_valid(y, x)) {
          d.valid[d.idx(y, x)] = 0;
          d.depth[d.idx(y, x)] = 0.0;
          ++removed;
        }
      }
    }
  }
}

namespace {

std::string view_prefix(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%03d", i);
  return buf;
}

}  // namespace

void write_scene(const std::string& dir, const Scene& scene) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  Json meta;
  meta["schema_version"] = 1;
  meta["seed"] = scene.seed;
  meta["normalization"] = normalization_to_json(scene.normalization);
  if (!scene.generator_json.empty())
    meta["generator"] = Json::parse(scene.generator_json);
  Json views = Json::array();
  for (std::size_t i = 0; i < scene.views.size(); ++i) {
    const ViewBundle& v = scene.views[i];
    Json jv;
    jv["camera"] = camera_to_json(v.camera);
    jv["has_depth"] = v.has_depth;
    views.push_back(jv);
    const std::string prefix = dir + "/" + view_prefix(static_cast<int>(i));
    write_png(prefix + ".png", v.rgb);
    if (v.has_depth) {
      write_pfm(prefix + ".pfm", v.depth);
      write_pgm_mask(prefix + ".pgm", v.depth);
    }
  }
  meta["views"] = views;
  write_text_file(dir + "/meta.json", meta.dump(2) + "\n");
}

Scene read_scene(const std::string& dir) {
  Json meta;
  try {
    meta = Json::parse(read_text_file(dir + "/meta.json"));
  } catch (const Json::exception& e) {
    throw Error::data("malformed meta.json in " + dir + ": " + e.what());
  }
  Scene scene;
  try {
    scene.seed = meta.at("seed").get<std::uint64_t>();
    scene.normalization = normalization_from_json(meta.at("normalization"));
    if (meta.contains("generator")) scene.generator_json = meta["generator"].dump();
    const Json& views = meta.at("views");
    for (std::size_t i = 0; i < views.size(); ++i) {
      ViewBundle v;
      v.view_id = static_cast<int>(i);
      v.camera = camera_from_json(views[i].at("camera"));
      v.has_depth = views[i].at("has_depth").get<bool>();
      const std::string prefix = dir + "/" + view_prefix(static_cast<int>(i));
      v.rgb = read_png(prefix + ".png");
      if (v.has_depth) {
        v.depth = read_pfm(prefix + ".pfm");
        read_pgm_mask(prefix + ".pgm", v.depth);
      }
      scene.views.push_back(std::move(v));
    }
  } catch (const Json::exception& e) {
    throw Error::data("malformed meta.json in " + dir + ": " + e.what());
  }
  return scene;
}

std::vector<std::string> list_scene_dirs(const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> dirs;
  if (!fs::is_directory(dataset_dir))
    throw Error::data("not a directory: " + dataset_dir);
  for (const auto& e : fs::directory_iterator(dataset_dir))
    if (e.is_directory() && fs::exists(e.path() / "meta.json"))
      dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

Scene generate_scene(std::uint64_t scene_seed, const DatasetGenConfig& cfg) {
  const SceneSpec spec = sample_scene(scene_seed, cfg.scene);
  std::vector<Camera> cams =
      sample_cameras(cfg.camera, cfg.views_per_scene,
                     splitmix_combine(scene_seed, 1), cfg.resolution, cfg.resolution);

  Scene scene;
  scene.seed = scene_seed;
  std::vector<DepthMap> depths(cams.size());
  std::vector<Image> rgbs(cams.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    DepthMap full_depth;
    render(spec, cams[i], cfg.resolution, cfg.resolution, &rgbs[i], &full_depth);
    if (cfg.depth_resolution == cfg.resolution) {
      depths[i] = std::move(full_depth);
    } else {
      // Depth lives on its own grid; render it there exactly instead of
      // resampling the RGB-raster depths.
      Image unused;
      render(spec, cams[i], cfg.depth_resolution, cfg.depth_resolution,
             &unused, &depths[i]);
    }
  }

  // Scene normalization needs at least two principal rays; single-view
  // scenes are already unit-ish scale by construction.
  NormalizationSpec norm;
  std::vector<Camera> cams_scaled = cams;
  if (cams.size() >= 2) {
    std::tie(norm, cams_scaled) =
        normalize_scene(cams, nullptr, NormalizationMode::ray_intersection);
    for (auto& d : depths)
      for (std::size_t i = 0; i < d.depth.size(); ++i)
        if (d.valid[i]) d.depth[i] *= norm.scale;
  }
  std::vector<Camera> cams_final = normalize_cameras(cams_scaled);

  if (cfg.scene.mask_dropout > 0) {
    Rng drop_rng = Rng::stream(scene_seed, 0xD20B);
    for (auto& d : depths) drop_mask_rectangles(d, cfg.scene.mask_dropout, drop_rng);
  }

  scene.normalization = norm;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    ViewBundle v;
    v.view_id = static_cast<int>(i);
    v.rgb = std::move(rgbs[i]);
    v.camera = cams_final[i];
    v.depth = std::move(depths[i]);
    v.has_depth = true;
    scene.views.push_back(std::move(v));
  }
  return scene;
}

void generate_dataset(const std::string& out_dir, const DatasetGenConfig& cfg,
                      std::uint64_t seed, const std::string& config_json) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  Json manifest;
  manifest["schema_version"] = 1;
  manifest["seed"] = seed;
  manifest["scenes"] = cfg.scenes;
  if (!config_json.empty()) manifest["config"] = Json::parse(config_json);
  write_text_file(out_dir + "/dataset.json", manifest.dump(2) + "\n");

  for (int s = 0; s < cfg.scenes; ++s) {
    Scene scene = generate_scene(splitmix_combine(seed, static_cast<std::uint64_t>(s)), cfg);
    scene.generator_json = config_json;
    char name[32];
    std::snprintf(name, sizeof(name), "/scene_%04d", s);
    write_scene(out_dir + name, scene);
  }
}

}  // namespace matrixkit
