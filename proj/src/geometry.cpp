#include "matrixkit/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "matrixkit/error.hpp"

namespace matrixkit {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Canonical camera-frame unit direction for grid cell (gx, gy), principal
// point at the grid center.
Vec3 canonical_direction(int gx, int gy, int gw, int gh, double focal) {
  const double u = gx + 0.5 - 0.5 * gw;
  const double v = gy + 0.5 - 0.5 * gh;
  return Vec3(u / focal, v / focal, 1.0).normalized();
}

// Best rotation R (world->camera) with d_cam ~= R d_world, via Procrustes.
// Returns the alignment residual sum (1 - cos angle) if requested.
Mat3 procrustes_rotation(const std::vector<Vec3>& cam_dirs,
                         const std::vector<Vec3>& world_dirs,
                         double* residual = nullptr) {
  Mat3 m = Mat3::Zero();
  for (std::size_t i = 0; i < cam_dirs.size(); ++i)
    m += cam_dirs[i] * world_dirs[i].transpose();
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  if (residual) {
    double e = 0.0;
    for (std::size_t i = 0; i < cam_dirs.size(); ++i)
      e += (cam_dirs[i] - r * world_dirs[i]).squaredNorm();
    *residual = e;
  }
  return r;
}

double procrustes_residual_for_focal(double focal, const RayMap& rm,
                                     const std::vector<Vec3>& world_dirs) {
  std::vector<Vec3> cam_dirs;
  cam_dirs.reserve(world_dirs.size());
  for (int y = 0; y < rm.height; ++y)
    for (int x = 0; x < rm.width; ++x)
      cam_dirs.push_back(canonical_direction(x, y, rm.width, rm.height, focal));
  double residual = 0.0;
  procrustes_rotation(cam_dirs, world_dirs, &residual);
  return residual;
}

}  // namespace

Camera Camera::rescaled(int new_width, int new_height) const {
  Camera out = *this;
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  out.width = new_width;
  out.height = new_height;
  out.focal = focal * sx;
  out.principal_point = Vec2(principal_point.x() * sx, principal_point.y() * sy);
  return out;
}

Camera Camera::look_at(const Vec3& center, const Vec3& target, double focal,
                       int width, int height, const Vec3& up_hint) {
  Vec3 fwd = (target - center).normalized();
  Vec3 up = up_hint.normalized();
  if (std::abs(fwd.dot(up)) > 1.0 - 1e-9)
    up = std::abs(fwd.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(0, 1, 0);
  const Vec3 right = fwd.cross(up).normalized();
  const Vec3 down = fwd.cross(right);
  Camera cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = fwd.transpose();
  cam.translation = -cam.rotation * center;
  cam.focal = focal;
  cam.principal_point = Vec2(0.5 * width, 0.5 * height);
  cam.width = width;
  cam.height = height;
  return cam;
}

void validate_camera(const Camera& cam) {
  const Mat3 rtr = cam.rotation.transpose() * cam.rotation - Mat3::Identity();
  if (rtr.cwiseAbs().maxCoeff() >= 1e-9)
    throw Error::data("invalid camera: rotation is not orthonormal");
  if (cam.rotation.determinant() < 0)
    throw Error::data("invalid camera: rotation determinant is negative");
  if (!(cam.focal > 0))
    throw Error::data("invalid camera: focal must be positive");
  if (cam.width <= 0 || cam.height <= 0)
    throw Error::data("invalid camera: resolution must be positive");
  if (cam.principal_point.x() < 0 || cam.principal_point.x() > cam.width ||
      cam.principal_point.y() < 0 || cam.principal_point.y() > cam.height)
    throw Error::data("invalid camera: principal point outside image bounds");
  if (!cam.center().allFinite())
    throw Error::data("invalid camera: non-finite camera center");
}

double focal_from_fov_deg(double fov_deg, int width) {
  return 0.5 * width / std::tan(0.5 * fov_deg * kPi / 180.0);
}

RayMap camera_to_raymap(const Camera& cam, int grid_width, int grid_height) {
  if (grid_width < 1 || grid_height < 1)
    throw Error::data("camera_to_raymap: grid dimensions must be >= 1");
  if (!(cam.focal > 0))
    throw Error::data("camera_to_raymap: invalid camera (focal <= 0)");

  RayMap rm(grid_width, grid_height);
  const Vec3 c = cam.center();
  const Mat3 rt = cam.rotation.transpose();
  const double sx = static_cast<double>(cam.width) / grid_width;
  const double sy = static_cast<double>(cam.height) / grid_height;
  for (int gy = 0; gy < grid_height; ++gy) {
    for (int gx = 0; gx < grid_width; ++gx) {
      const double u = (gx + 0.5) * sx;
      const double v = (gy + 0.5) * sy;
      Vec3 dir_cam((u - cam.principal_point.x()) / cam.focal,
                   (v - cam.principal_point.y()) / cam.focal, 1.0);
      const Vec3 d = (rt * dir_cam).normalized();
      rm.directions[rm.idx(gy, gx)] = d;
      rm.moments[rm.idx(gy, gx)] = c.cross(d);
    }
  }
  return rm;
}

Camera recover_camera(const RayMap& rm, const RecoverOptions& opts) {
  const std::size_t n = rm.directions.size();
  if (n < 2) throw Error::data("recover_camera: ray map too small");

  // Repair noisy input: renormalize directions, project moments onto the
  // plane orthogonal to the direction (minimum-norm Pluecker repair).
  std::vector<Vec3> dirs(n), moments(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double len = rm.directions[i].norm();
    if (!(len > 0))
      throw Error::data("recover_camera: zero-length ray direction");
    dirs[i] = rm.directions[i] / len;
    const Vec3 m = rm.moments[i] / len;
    moments[i] = m - dirs[i] * dirs[i].dot(m);
  }

  // Camera center: least-squares point minimizing sum of squared distances
  // to all rays. (I - d d^T) is the projector onto a ray's normal plane.
  Mat3 a = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Mat3 p = Mat3::Identity() - dirs[i] * dirs[i].transpose();
    a += p;
    b += dirs[i].cross(moments[i]);  // == (I - d d^T) (d x m)
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(a);
  if (es.eigenvalues()(0) < 1e-9 * std::max(1.0, es.eigenvalues()(2)))
    throw Error::data("recover_camera: degenerate ray map (parallel rays)");
  const Vec3 center = a.ldlt().solve(b);

  double focal;
  if (opts.focal_hint) {
    focal = *opts.focal_hint;
    if (!(focal > 0)) throw Error::data("recover_camera: invalid focal hint");
  } else {
    // Coarse scan to bracket the best focal, then golden-section refine.
    const double lo = opts.focal_min_factor * rm.width;
    const double hi = opts.focal_max_factor * rm.width;
    const int ns = std::max(4, opts.coarse_samples);
    double best_f = lo, best_e = std::numeric_limits<double>::max();
    for (int i = 0; i < ns; ++i) {
      const double f = lo * std::pow(hi / lo, static_cast<double>(i) / (ns - 1));
      const double e = procrustes_residual_for_focal(f, rm, dirs);
      if (e < best_e) {
        best_e = e;
        best_f = f;
      }
    }
    double fa = std::max(lo, best_f / std::pow(hi / lo, 1.0 / (ns - 1)));
    double fb = std::min(hi, best_f * std::pow(hi / lo, 1.0 / (ns - 1)));
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = fb - gr * (fb - fa);
    double x2 = fa + gr * (fb - fa);
    double e1 = procrustes_residual_for_focal(x1, rm, dirs);
    double e2 = procrustes_residual_for_focal(x2, rm, dirs);
    while (fb - fa > opts.tolerance * fb) {
      if (e1 < e2) {
        fb = x2;
        x2 = x1;
        e2 = e1;
        x1 = fb - gr * (fb - fa);
        e1 = procrustes_residual_for_focal(x1, rm, dirs);
      } else {
        fa = x1;
        x1 = x2;
        e1 = e2;
        x2 = fa + gr * (fb - fa);
        e2 = procrustes_residual_for_focal(x2, rm, dirs);
      }
    }
    focal = 0.5 * (fa + fb);
  }

  std::vector<Vec3> cam_dirs;
  cam_dirs.reserve(n);
  for (int y = 0; y < rm.height; ++y)
    for (int x = 0; x < rm.width; ++x)
      cam_dirs.push_back(canonical_direction(x, y, rm.width, rm.height, focal));
  const Mat3 rotation = procrustes_rotation(cam_dirs, dirs);

  Camera cam;
  cam.rotation = rotation;
  cam.translation = -rotation * center;
  cam.focal = focal;
  cam.principal_point = Vec2(0.5 * rm.width, 0.5 * rm.height);
  cam.width = rm.width;
  cam.height = rm.height;
  return cam;
}

Camera NormalizationSpec::apply(const Camera& cam) const {
  Camera out = cam;
  out.translation = (cam.rotation * origin + cam.translation) * scale;
  return out;
}

Camera NormalizationSpec::invert(const Camera& cam) const {
  Camera out = cam;
  out.translation = cam.translation / scale - cam.rotation * origin;
  return out;
}

std::pair<NormalizationSpec, std::vector<Camera>> normalize_scene(
    const std::vector<Camera>& cams, const std::vector<DepthMap>* depths,
    NormalizationMode mode) {
  NormalizationSpec spec;
  spec.mode = mode;

  switch (mode) {
    case NormalizationMode::ray_intersection: {
      if (cams.size() < 2)
        throw Error::data("normalize_scene: ray-intersection mode needs >= 2 cameras");
      Mat3 a = Mat3::Zero();
      Vec3 b = Vec3::Zero();
      for (const auto& cam : cams) {
        const Vec3 f = cam.forward();
        const Mat3 p = Mat3::Identity() - f * f.transpose();
        a += p;
        b += p * cam.center();
      }
      Eigen::SelfAdjointEigenSolver<Mat3> es(a);
      if (es.eigenvalues()(0) < 1e-9 * std::max(1.0, es.eigenvalues()(2)))
        throw Error::data("normalize_scene: principal rays are parallel");
      spec.origin = a.ldlt().solve(b);
      double mean_dist = 0.0;
      for (const auto& cam : cams) mean_dist += (cam.center() - spec.origin).norm();
      mean_dist /= static_cast<double>(cams.size());
      if (!(mean_dist > 0))
        throw Error::data("normalize_scene: cameras coincide with the origin");
      spec.scale = 1.0 / mean_dist;
      break;
    }
    case NormalizationMode::first_view_depth_median: {
      if (!depths || depths->empty())
        throw Error::data("normalize_scene: depth-median mode needs a first-view depth");
      const DepthMap& d0 = depths->front();
      std::vector<double> vals;
      vals.reserve(d0.depth.size());
      for (std::size_t i = 0; i < d0.depth.size(); ++i)
        if (d0.valid[i]) vals.push_back(d0.depth[i]);
      if (vals.empty())
        throw Error::data("normalize_scene: first-view depth has no valid pixels");
      std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
      double median = vals[vals.size() / 2];
      if (vals.size() % 2 == 0) {
        const double hi = median;
        std::nth_element(vals.begin(), vals.begin() + vals.size() / 2 - 1, vals.end());
        median = 0.5 * (vals[vals.size() / 2 - 1] + hi);
      }
      spec.origin = Vec3::Zero();
      spec.scale = 1.0 / median;
      break;
    }
    case NormalizationMode::max_camera_distance: {
      if (cams.empty()) throw Error::data("normalize_scene: empty camera list");
      Vec3 mean = Vec3::Zero();
      for (const auto& cam : cams) mean += cam.center();
      mean /= static_cast<double>(cams.size());
      double max_dist = 0.0;
      for (const auto& cam : cams)
        max_dist = std::max(max_dist, (cam.center() - mean).norm());
      if (!(max_dist > 0))
        throw Error::data("normalize_scene: all cameras coincide");
      spec.origin = mean;
      spec.scale = 1.0 / max_dist;
      break;
    }
  }

  std::vector<Camera> out;
  out.reserve(cams.size());
  for (const auto& cam : cams) out.push_back(spec.apply(cam));
  return {spec, out};
}

std::vector<Camera> normalize_cameras(const std::vector<Camera>& cams) {
  if (cams.empty()) throw Error::data("normalize_cameras: empty camera list");
  // Rigid world map x' = Q x + b with Q = R0, b = t0 - e_z sends view 0 to
  // the identity camera.
  const Mat3 q = cams[0].rotation;
  const Vec3 b = cams[0].translation - Vec3(0, 0, 1);
  std::vector<Camera> out;
  out.reserve(cams.size());
  for (const auto& cam : cams) {
    Camera c = cam;
    c.rotation = cam.rotation * q.transpose();
    c.translation = cam.translation - c.rotation * b;
    out.push_back(c);
  }
  return out;
}

double rotation_geodesic_rad(const Mat3& a, const Mat3& b) {
  const Mat3 d = a * b.transpose();
  // atan2 form stays accurate for angles near zero, unlike plain acos.
  const Vec3 w(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
  const double s = 0.5 * w.norm();
  const double c = std::clamp(0.5 * (d.trace() - 1.0), -1.0, 1.0);
  return std::atan2(s, c);
}

}  // namespace matrixkit
