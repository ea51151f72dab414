#include "matrixkit/mvs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "matrixkit/error.hpp"
#include "matrixkit/parallel.hpp"

namespace matrixkit {

namespace {

struct GridScale {
  double sx, sy;  // image pixels per depth-grid pixel
};

GridScale grid_scale(const DepthMap& d, const Camera& cam) {
  const double sx = static_cast<double>(cam.width) / d.width;
  const double sy = static_cast<double>(cam.height) / d.height;
  if (std::abs(sx - sy) > 1e-9 * std::max(sx, sy))
    throw Error::data("depth/camera resolution mismatch is not a uniform scale");
  return {sx, sy};
}

Vec3 unproject_pixel(const Camera& cam, const GridScale& gs, int x, int y,
                     double depth) {
  const double u = (x + 0.5) * gs.sx;
  const double v = (y + 0.5) * gs.sy;
  const Vec3 cam_pt((u - cam.principal_point.x()) / cam.focal * depth,
                    (v - cam.principal_point.y()) / cam.focal * depth, depth);
  return cam.rotation.transpose() * (cam_pt - cam.translation);
}

// One consistent source value for a reference pixel, if any: the gathered
// depth is the source surface point expressed in the reference camera.
struct Gathered {
  bool ok = false;
  double depth_in_ref = 0.0;
};

Gathered gather_from_source(const Vec3& p_world, double d_ref, int rx, int ry,
                            const Camera& cam_ref, const GridScale& gs_ref,
                            const DepthMap& src, const Camera& cam_src,
                            const GridScale& gs_src, const FusionOptions& opts) {
  Gathered out;
  double z_src = 0.0;
  const Vec2 uv = cam_src.project(p_world, &z_src);
  if (!(z_src > 0)) return out;
  const double ug = uv.x() / gs_src.sx;
  const double vg = uv.y() / gs_src.sy;
  if (ug < 0 || ug >= src.width || vg < 0 || vg >= src.height) return out;

  // Probe the four source pixels whose centers surround the landing point;
  // the pixel on the same surface round-trips, occluders do not.
  const int x0 = static_cast<int>(std::floor(ug - 0.5));
  const int y0 = static_cast<int>(std::floor(vg - 0.5));
  double best_err = std::numeric_limits<double>::max();
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const int xs = x0 + dx;
      const int ys = y0 + dy;
      if (xs < 0 || xs >= src.width || ys < 0 || ys >= src.height) continue;
      if (!src.is_valid(ys, xs)) continue;
      const Vec3 q_world =
          unproject_pixel(cam_src, gs_src, xs, ys, src.at(ys, xs));
      double z_ref = 0.0;
      const Vec2 uv_ref = cam_ref.project(q_world, &z_ref);
      if (!(z_ref > 0)) continue;
      const double du = uv_ref.x() / gs_ref.sx - (rx + 0.5);
      const double dv = uv_ref.y() / gs_ref.sy - (ry + 0.5);
      const double err_px = std::sqrt(du * du + dv * dv);
      const double err_depth = std::abs(z_ref - d_ref) / d_ref;
      if (err_px < opts.pix_thresh && err_depth < opts.depth_thresh &&
          err_px < best_err) {
        best_err = err_px;
        out.ok = true;
        out.depth_in_ref = z_ref;
      }
    }
  }
  return out;
}

void check_fusion_inputs(const std::vector<DepthMap>& depths,
                         const std::vector<Camera>& cams,
                         const FusionOptions& opts) {
  if (depths.size() < 2)
    throw Error::data("geometric filter/fusion needs >= 2 views");
  if (depths.size() != cams.size())
    throw Error::data("geometric filter/fusion: depth/camera count mismatch");
  if (!(opts.pix_thresh > 0) || !(opts.depth_thresh > 0))
    throw Error::data("geometric filter/fusion: thresholds must be positive");
}

}  // namespace

PointCloud backproject(const DepthMap& d, const Camera& cam, const Image* rgb) {
  const GridScale gs = grid_scale(d, cam);
  if (rgb && (rgb->width != cam.width || rgb->height != cam.height))
    throw Error::data("backproject: RGB resolution does not match the camera");
  PointCloud pc;
  pc.points.reserve(d.valid_count());
  if (rgb) pc.colors.reserve(d.valid_count());
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      if (!d.is_valid(y, x)) continue;
      pc.points.push_back(unproject_pixel(cam, gs, x, y, d.at(y, x)));
      if (rgb) {
        const int ix = std::min(rgb->width - 1,
                                static_cast<int>((x + 0.5) * gs.sx));
        const int iy = std::min(rgb->height - 1,
                                static_cast<int>((y + 0.5) * gs.sy));
        pc.colors.push_back(
            Vec3(rgb->at(iy, ix, 0), rgb->at(iy, ix, 1), rgb->at(iy, ix, 2)));
      }
    }
  }
  return pc;
}

std::vector<Reprojection> reproject(const DepthMap& d_ref, const Camera& cam_ref,
                                    const Camera& cam_src) {
  const GridScale gs = grid_scale(d_ref, cam_ref);
  std::vector<Reprojection> out(d_ref.depth.size());
  for (int y = 0; y < d_ref.height; ++y) {
    for (int x = 0; x < d_ref.width; ++x) {
      if (!d_ref.is_valid(y, x)) continue;
      const Vec3 p = unproject_pixel(cam_ref, gs, x, y, d_ref.at(y, x));
      Reprojection& r = out[d_ref.idx(y, x)];
      double z = 0.0;
      const Vec2 uv = cam_src.project(p, &z);
      r.u = uv.x();
      r.v = uv.y();
      r.depth = z;
      r.in_view = z > 0 && uv.x() >= 0 && uv.x() < cam_src.width &&
                  uv.y() >= 0 && uv.y() < cam_src.height;
    }
  }
  return out;
}

std::vector<DepthMap> geometric_filter(const std::vector<DepthMap>& depths,
                                       const std::vector<Camera>& cams,
                                       const FusionOptions& opts) {
  check_fusion_inputs(depths, cams, opts);
  const int n_views = static_cast<int>(depths.size());
  std::vector<GridScale> scales;
  scales.reserve(depths.size());
  for (int v = 0; v < n_views; ++v) scales.push_back(grid_scale(depths[v], cams[v]));

  std::vector<DepthMap> out(depths.begin(), depths.end());
  for (int r = 0; r < n_views; ++r) {
    const DepthMap& ref = depths[r];
    parallel_for(ref.height, [&](std::int64_t y) {
      for (int x = 0; x < ref.width; ++x) {
        if (!ref.is_valid(static_cast<int>(y), x)) continue;
        const double d = ref.at(static_cast<int>(y), x);
        const Vec3 p = unproject_pixel(cams[r], scales[r], x, static_cast<int>(y), d);
        int consistent = 0;
        for (int s = 0; s < n_views && consistent < opts.min_consistent; ++s) {
          if (s == r) continue;
          if (gather_from_source(p, d, x, static_cast<int>(y), cams[r], scales[r],
                                 depths[s], cams[s], scales[s], opts).ok)
            ++consistent;
        }
        if (consistent < opts.min_consistent) {
          out[r].depth[ref.idx(static_cast<int>(y), x)] = 0.0;
          out[r].valid[ref.idx(static_cast<int>(y), x)] = 0;
        }
      }
    });
  }
  return out;
}

std::vector<DepthMap> geometric_fusion(const std::vector<DepthMap>& depths,
                                       const std::vector<Camera>& cams,
                                       FusionStatistic statistic,
                                       const FusionOptions& opts) {
  check_fusion_inputs(depths, cams, opts);
  const int n_views = static_cast<int>(depths.size());
  std::vector<GridScale> scales;
  scales.reserve(depths.size());
  for (int v = 0; v < n_views; ++v) scales.push_back(grid_scale(depths[v], cams[v]));

  std::vector<DepthMap> out(depths.begin(), depths.end());
  for (int r = 0; r < n_views; ++r) {
    const DepthMap& ref = depths[r];
    parallel_for(ref.height, [&](std::int64_t yy) {
      const int y = static_cast<int>(yy);
      std::vector<double> gathered;
      for (int x = 0; x < ref.width; ++x) {
        if (!ref.is_valid(y, x)) continue;
        const double d = ref.at(y, x);
        const Vec3 p = unproject_pixel(cams[r], scales[r], x, y, d);
        gathered.clear();
        gathered.push_back(d);
        for (int s = 0; s < n_views; ++s) {
          if (s == r) continue;
          const Gathered g = gather_from_source(p, d, x, y, cams[r], scales[r],
                                                depths[s], cams[s], scales[s], opts);
          if (g.ok) gathered.push_back(g.depth_in_ref);
        }
        double fused;
        if (statistic == FusionStatistic::mean) {
          double sum = 0.0;
          for (double g : gathered) sum += g;
          fused = sum / static_cast<double>(gathered.size());
        } else {
          std::sort(gathered.begin(), gathered.end());
          const std::size_t m = gathered.size();
          fused = (m % 2 == 1) ? gathered[m / 2]
                               : 0.5 * (gathered[m / 2 - 1] + gathered[m / 2]);
        }
        out[r].depth[ref.idx(y, x)] = fused;
      }
    });
  }
  return out;
}

}  // namespace matrixkit
