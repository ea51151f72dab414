#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "matrixkit/depthmap.hpp"
#include "matrixkit/geometry.hpp"
#include "matrixkit/image.hpp"
#include "matrixkit/rng.hpp"

namespace matrixkit {

enum class PrimitiveKind { sphere, box, plane };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();  // object -> world
  Vec3 size = Vec3::Ones();          // sphere: radius (x); box/plane: half-extents
  Vec3 albedo = Vec3::Ones();
};

struct DirectionalLight {
  Vec3 direction = Vec3(0, 0, -1);  // travel direction of the light
  Vec3 color = Vec3::Ones();
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<Primitive> primitives;
  std::vector<DirectionalLight> lights;
  Vec3 background = Vec3(0.06, 0.08, 0.10);
  double ambient = 0.3;
};

struct SceneGenConfig {
  int min_primitives = 3;
  int max_primitives = 6;
  double min_size = 0.15;
  double max_size = 0.4;
  int lights = 2;
  double ambient = 0.3;
  Vec3 background = Vec3(0.06, 0.08, 0.10);
  double mask_dropout = 0.0;  // fraction of valid depth pixels to knock out
};

struct CameraSamplerConfig {
  double fov_deg = 50.0;
  double azimuth_min_deg = 0.0;
  double azimuth_max_deg = 360.0;
  double elevation_min_deg = -45.0;
  double elevation_max_deg = 90.0;
  double distance_min = 1.1;
  double distance_max = 1.6;
};

// Deterministic function of (seed, config); every primitive fits inside the
// unit bounding box [-1, 1]^3.
SceneSpec sample_scene(std::uint64_t seed, const SceneGenConfig& cfg);

// Look-at cameras pointed at the scene origin; azimuth/elevation/distance
// uniform in the configured ranges.
std::vector<Camera> sample_cameras(const CameraSamplerConfig& cfg, int n_views,
                                   std::uint64_t seed, int width, int height);

// Analytic raycast with Lambertian shading. Depth is the exact camera-frame z
// of the first hit; the validity mask is the hit mask; background pixels get
// the background color and invalid depth. Deterministic.
void render(const SceneSpec& spec, const Camera& cam, int width, int height,
            Image* rgb, DepthMap* depth);

// Unsigned distance from a point to the nearest primitive surface.
double scene_surface_distance(const SceneSpec& spec, const Vec3& p);

// Knocks random rectangles out of the validity mask until roughly `fraction`
// of the valid pixels are gone. Emulates incomplete sensor depth.
void drop_mask_rectangles(DepthMap& d, double fraction, Rng& rng);

struct ViewBundle {
  int view_id = 0;
  Image rgb;
  Camera camera;
  DepthMap depth;
  bool has_depth = true;
};

struct Scene {
  std::uint64_t seed = 0;
  std::vector<ViewBundle> views;
  NormalizationSpec normalization;
  std::string generator_json;  // config snapshot, empty if not generated
};

// Dataset directory layout per scene: meta.json, view_XXX.png (8-bit RGB),
// view_XXX.pfm (depth) and view_XXX.pgm (mask) for views that carry depth.
void write_scene(const std::string& dir, const Scene& scene);
Scene read_scene(const std::string& dir);

// Scene subdirectories of a dataset directory, sorted.
std::vector<std::string> list_scene_dirs(const std::string& dataset_dir);

struct DatasetGenConfig {
  int scenes = 4;
  int views_per_scene = 4;
  int resolution = 32;        // RGB raster
  int depth_resolution = 16;  // depth grid, rendered exactly at this raster
  SceneGenConfig scene;
  CameraSamplerConfig camera;
};

// One fully prepared scene: sampled, rendered, scene-normalized (mean camera
// distance 1) and camera-normalized (view 0 is the identity camera).
Scene generate_scene(std::uint64_t scene_seed, const DatasetGenConfig& cfg);

// Full deterministic dataset generation: generate_scene per scene seed
// derived from `seed`, written to scene_XXXX subdirectories.
void generate_dataset(const std::string& out_dir, const DatasetGenConfig& cfg,
                      std::uint64_t seed, const std::string& config_json);

}  // namespace matrixkit
