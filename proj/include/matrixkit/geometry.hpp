#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>
#include <utility>
#include <vector>

#include "matrixkit/depthmap.hpp"

namespace matrixkit {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Pinhole camera. Convention (asserted in tests): right-handed world, the
// camera looks down +z, world->camera is x_cam = R x_world + t, image x right,
// image y down, pixel centers at (u + 0.5, v + 0.5).
struct Camera {
  Mat3 rotation = Mat3::Identity();   // world -> camera
  Vec3 translation = Vec3(0, 0, 1);   // world -> camera, scene units
  double focal = 1.0;                 // pixels
  Vec2 principal_point = Vec2(0, 0);  // pixels
  int width = 0;
  int height = 0;

  Vec3 center() const { return -rotation.transpose() * translation; }

  Mat3 intrinsics() const {
    Mat3 k = Mat3::Identity();
    k(0, 0) = focal;
    k(1, 1) = focal;
    k(0, 2) = principal_point.x();
    k(1, 2) = principal_point.y();
    return k;
  }

  // Unit ray direction in world coordinates through pixel (u, v).
  Vec3 ray_direction(double u, double v) const {
    Vec3 d((u - principal_point.x()) / focal, (v - principal_point.y()) / focal, 1.0);
    return rotation.transpose() * d.normalized();
  }

  // Principal axis (camera +z) in world coordinates.
  Vec3 forward() const { return rotation.row(2).transpose(); }

  // Projects a world point; returns (u, v) and writes camera-frame z if asked.
  Vec2 project(const Vec3& world, double* depth = nullptr) const {
    const Vec3 cam = rotation * world + translation;
    if (depth) *depth = cam.z();
    return Vec2(focal * cam.x() / cam.z() + principal_point.x(),
                focal * cam.y() / cam.z() + principal_point.y());
  }

  // Same camera rays expressed on a different pixel raster.
  Camera rescaled(int new_width, int new_height) const;

  // Look-at camera; `up` fixes the roll (falls back near the poles).
  static Camera look_at(const Vec3& center, const Vec3& target, double focal,
                        int width, int height, const Vec3& up = Vec3(0, 0, 1));
};

// Throws Error::data when an invariant is violated (orthonormality, focal > 0,
// principal point inside bounds, finite center).
void validate_camera(const Camera& cam);

double focal_from_fov_deg(double fov_deg, int width);

// H x W grid of Pluecker rays (unit direction, moment = point_on_ray x dir).
struct RayMap {
  int width = 0;
  int height = 0;
  std::vector<Vec3> directions;
  std::vector<Vec3> moments;

  RayMap() = default;
  RayMap(int w, int h) : width(w), height(h) {
    directions.assign(static_cast<std::size_t>(w) * h, Vec3::Zero());
    moments.assign(static_cast<std::size_t>(w) * h, Vec3::Zero());
  }

  std::size_t idx(int y, int x) const {
    return static_cast<std::size_t>(y) * width + x;
  }
};

// Rasterizes the camera to a Pluecker ray map. Grid cells sample the image
// plane uniformly at their pixel centers; every ray passes through the camera
// center. Throws on degenerate cameras (focal <= 0).
RayMap camera_to_raymap(const Camera& cam, int grid_width, int grid_height);

struct RecoverOptions {
  std::optional<double> focal_hint;  // grid-pixel units
  double focal_min_factor = 0.2;     // search range [0.2 W, 5 W]
  double focal_max_factor = 5.0;
  int coarse_samples = 48;
  double tolerance = 1e-12;
};

// Inverts camera_to_raymap: least-squares camera center from all rays,
// Procrustes rotation against canonical pixel directions, golden-section
// focal search when no hint is given. Directions are renormalized and
// moments projected to the orthogonal complement first, so noisy ray maps
// are accepted. The recovered camera lives on the grid raster with the
// principal point at the grid center.
Camera recover_camera(const RayMap& rm, const RecoverOptions& opts = {});

enum class NormalizationMode {
  ray_intersection,
  first_view_depth_median,
  max_camera_distance,
};

// World similarity x' = (x - origin) * scale applied to a camera set.
struct NormalizationSpec {
  NormalizationMode mode = NormalizationMode::ray_intersection;
  Vec3 origin = Vec3::Zero();
  double scale = 1.0;

  Camera apply(const Camera& cam) const;
  Camera invert(const Camera& cam) const;
};

// Scene normalization per mode:
//  - ray_intersection: origin = least-squares intersection of the principal
//    rays, scale so the mean camera distance to the origin becomes 1.
//  - first_view_depth_median: scale = 1 / median(valid depths of view 0).
//  - max_camera_distance: origin = mean camera position, scale so the maximum
//    camera distance to it becomes 1.
// Relative transformations between cameras are preserved exactly.
std::pair<NormalizationSpec, std::vector<Camera>> normalize_scene(
    const std::vector<Camera>& cams, const std::vector<DepthMap>* depths,
    NormalizationMode mode);

// Rigid world transform making view 0 the identity camera (R = I,
// t = [0, 0, 1]); relative poses are untouched. Idempotent.
std::vector<Camera> normalize_cameras(const std::vector<Camera>& cams);

double rotation_geodesic_rad(const Mat3& a, const Mat3& b);

}  // namespace matrixkit
