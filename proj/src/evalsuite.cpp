#include "matrixkit/evalsuite.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "matrixkit/error.hpp"
#include "matrixkit/parallel.hpp"

namespace matrixkit {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kPsnrCapDb = 99.0;

std::vector<Vec3> camera_centers(const std::vector<Camera>& cams) {
  std::vector<Vec3> out;
  out.reserve(cams.size());
  for (const auto& c : cams) out.push_back(c.center());
  return out;
}

// Exact nearest-neighbor queries on a uniform grid with ring expansion.
class PointGrid {
 public:
  explicit PointGrid(const std::vector<Vec3>& points) : points_(points) {
    lo_ = Vec3::Constant(std::numeric_limits<double>::max());
    Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
    for (const auto& p : points) {
      lo_ = lo_.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const double diag = (hi - lo_).norm();
    const double target = diag / std::cbrt(static_cast<double>(points.size()) + 1.0);
    cell_ = std::max(target, 1e-12);
    for (int k = 0; k < 3; ++k)
      dims_[k] = std::max(1, static_cast<int>((hi(k) - lo_(k)) / cell_) + 1);
    cells_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], {});
    for (std::size_t i = 0; i < points.size(); ++i)
      cells_[cell_index(coord(points[i]))].push_back(static_cast<int>(i));
  }

  double nearest_distance(const Vec3& q) const {
    const std::array<int, 3> c = coord(q);
    double best = std::numeric_limits<double>::max();
    const int max_ring = dims_[0] + dims_[1] + dims_[2];
    for (int ring = 0; ring <= max_ring; ++ring) {
      // A cell in ring r only holds points at distance >= (r-1) * cell from
      // the query; once that bound beats the best hit, the search is exact.
      if (best < std::numeric_limits<double>::max() &&
          static_cast<double>(ring - 1) * cell_ > best)
        break;
      for (int dz = -ring; dz <= ring; ++dz) {
        for (int dy = -ring; dy <= ring; ++dy) {
          for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
              continue;  // shell only
            const int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
            if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] ||
                z >= dims_[2])
              continue;
            for (int idx : cells_[cell_index({x, y, z})])
              best = std::min(best, (points_[idx] - q).norm());
          }
        }
      }
    }
    return best;
  }

 private:
  std::array<int, 3> coord(const Vec3& p) const {
    std::array<int, 3> c;
    for (int k = 0; k < 3; ++k)
      c[k] = std::clamp(static_cast<int>((p(k) - lo_(k)) / cell_), 0, dims_[k] - 1);
    return c;
  }
  std::size_t cell_index(const std::array<int, 3>& c) const {
    return (static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
  }

  const std::vector<Vec3>& points_;
  Vec3 lo_;
  double cell_ = 1.0;
  int dims_[3] = {1, 1, 1};
  std::vector<std::vector<int>> cells_;
};

double mean_nearest_distance(const std::vector<Vec3>& from,
                             const std::vector<Vec3>& to) {
  const PointGrid grid(to);
  std::vector<double> dist(from.size());
  parallel_for(static_cast<std::int64_t>(from.size()),
               [&](std::int64_t i) { dist[i] = grid.nearest_distance(from[i]); });
  double sum = 0.0;
  for (double d : dist) sum += d;
  return sum / static_cast<double>(from.size());
}

}  // namespace

double relative_rotation_accuracy(const std::vector<Camera>& pred,
                                  const std::vector<Camera>& gt,
                                  double thresh_deg) {
  if (pred.size() != gt.size())
    throw Error::data("relative_rotation_accuracy: length mismatch");
  if (pred.size() < 2)
    throw Error::data("relative_rotation_accuracy: need >= 2 cameras");
  const double thresh = thresh_deg * kPi / 180.0;
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < pred.size(); ++j) {
      if (i == j) continue;
      const Mat3 rel_pred = pred[i].rotation * pred[j].rotation.transpose();
      const Mat3 rel_gt = gt[i].rotation * gt[j].rotation.transpose();
      hits += rotation_geodesic_rad(rel_pred, rel_gt) < thresh;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

SimilarityTransform umeyama_alignment(const std::vector<Vec3>& src,
                                      const std::vector<Vec3>& dst) {
  if (src.size() != dst.size() || src.size() < 2)
    throw Error::data("umeyama_alignment: need matching lists of >= 2 points");
  const double n = static_cast<double>(src.size());
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= n;
  mu_d /= n;

  Mat3 cov = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 xs = src[i] - mu_s;
    const Vec3 xd = dst[i] - mu_d;
    cov += xd * xs.transpose();
    var_s += xs.squaredNorm();
  }
  cov /= n;
  var_s /= n;
  if (var_s < 1e-15)
    throw Error::data("umeyama_alignment: source points are coincident");

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2, 2) = -1;

  SimilarityTransform t;
  t.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  t.scale = (svd.singularValues().asDiagonal().toDenseMatrix() * s).trace() / var_s;
  t.translation = mu_d - t.scale * (t.rotation * mu_s);
  return t;
}

double camera_center_accuracy(const std::vector<Camera>& pred,
                              const std::vector<Camera>& gt, double thresh) {
  if (pred.size() != gt.size())
    throw Error::data("camera_center_accuracy: length mismatch");
  if (pred.size() < 2)
    throw Error::data("camera_center_accuracy: need >= 2 cameras");
  const std::vector<Vec3> cp = camera_centers(pred);
  const std::vector<Vec3> cg = camera_centers(gt);

  Vec3 centroid = Vec3::Zero();
  for (const auto& c : cg) centroid += c;
  centroid /= static_cast<double>(cg.size());
  double scene_scale = 0.0;
  for (const auto& c : cg) scene_scale = std::max(scene_scale, (c - centroid).norm());
  if (scene_scale < 1e-15)
    throw Error::data("camera_center_accuracy: degenerate ground-truth scene");

  const SimilarityTransform t = umeyama_alignment(cp, cg);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < cp.size(); ++i)
    hits += (t.apply(cp[i]) - cg[i]).norm() < thresh * scene_scale;
  return static_cast<double>(hits) / static_cast<double>(cp.size());
}

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw Error::data("depth_metrics: shape mismatch");
  DepthMetrics m;
  std::size_t n = 0;
  double sum_abs_rel = 0, sum_log10 = 0, sum_sq = 0;
  std::size_t d1 = 0, d2 = 0, d3 = 0, tau = 0;
  for (std::size_t i = 0; i < pred.depth.size(); ++i) {
    if (!pred.valid[i] || !gt.valid[i]) continue;
    const double p = pred.depth[i];
    const double g = gt.depth[i];
    ++n;
    sum_abs_rel += std::abs(p - g) / g;
    sum_log10 += std::abs(std::log10(p) - std::log10(g));
    sum_sq += (p - g) * (p - g);
    const double ratio = std::max(p / g, g / p);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
    tau += ratio < 1.03;
  }
  if (n == 0) throw Error::data("depth_metrics: no jointly-valid pixels");
  const double dn = static_cast<double>(n);
  m.abs_rel = sum_abs_rel / dn;
  m.log10 = sum_log10 / dn;
  m.rms = std::sqrt(sum_sq / dn);
  m.delta1 = d1 / dn;
  m.delta2 = d2 / dn;
  m.delta3 = d3 / dn;
  m.rel = m.abs_rel * 100.0;
  m.tau = tau / dn;
  return m;
}

double psnr(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height ||
      pred.channels != gt.channels)
    throw Error::data("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.data.size());
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, -10.0 * std::log10(mse));
}

double ssim(const Image& pred, const Image& gt) {
  if (pred.width != gt.width || pred.height != gt.height ||
      pred.channels != gt.channels)
    throw Error::data("ssim: shape mismatch");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  if (pred.width < kWin || pred.height < kWin)
    throw Error::data("ssim: image smaller than the 11x11 window");

  double kernel[kWin];
  double ksum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    kernel[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;

  const int w = pred.width, h = pred.height;
  const int ow = w - kWin + 1, oh = h - kWin + 1;

  std::vector<double> x(static_cast<std::size_t>(w) * h), y(x.size());
  // Separable valid-mode Gaussian filter.
  auto blur = [&](const std::vector<double>& in, std::vector<double>& out) {
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < ow; ++col) {
        double acc = 0.0;
        for (int k = 0; k < kWin; ++k) acc += kernel[k] * in[r * w + col + k];
        tmp[r * ow + col] = acc;
      }
    out.assign(static_cast<std::size_t>(ow) * oh, 0.0);
    for (int r = 0; r < oh; ++r)
      for (int col = 0; col < ow; ++col) {
        double acc = 0.0;
        for (int k = 0; k < kWin; ++k) acc += kernel[k] * tmp[(r + k) * ow + col];
        out[r * ow + col] = acc;
      }
  };

  double total = 0.0;
  std::vector<double> mu_x, mu_y, xx, yy, xy, t;
  for (int c = 0; c < pred.channels; ++c) {
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        x[r * w + col] = pred.at(r, col, c);
        y[r * w + col] = gt.at(r, col, c);
      }
    blur(x, mu_x);
    blur(y, mu_y);
    t.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) t[i] = x[i] * x[i];
    blur(t, xx);
    for (std::size_t i = 0; i < x.size(); ++i) t[i] = y[i] * y[i];
    blur(t, yy);
    for (std::size_t i = 0; i < x.size(); ++i) t[i] = x[i] * y[i];
    blur(t, xy);

    double channel = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
      const double vx = xx[i] - mu_x[i] * mu_x[i];
      const double vy = yy[i] - mu_y[i] * mu_y[i];
      const double cxy = xy[i] - mu_x[i] * mu_y[i];
      channel += (2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * cxy + c2) /
                 ((mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (vx + vy + c2));
    }
    total += channel / static_cast<double>(mu_x.size());
  }
  return total / pred.channels;
}

ImageMetrics image_metrics(const Image& pred, const Image& gt) {
  return {psnr(pred, gt), ssim(pred, gt)};
}

PointCloudMetrics pointcloud_metrics(const PointCloud& pred, const PointCloud& gt) {
  if (pred.points.empty() || gt.points.empty())
    throw Error::data("pointcloud_metrics: empty point cloud");
  PointCloudMetrics m;
  m.accuracy = mean_nearest_distance(pred.points, gt.points);
  m.completeness = mean_nearest_distance(gt.points, pred.points);
  m.overall = 0.5 * (m.accuracy + m.completeness);
  return m;
}

}  // namespace matrixkit
