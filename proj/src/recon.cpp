#include "matrixkit/recon.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "matrixkit/error.hpp"
#include "matrixkit/evalsuite.hpp"
#include "matrixkit/rng.hpp"

namespace matrixkit {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Trajectory orbit_trajectory(int n, double elevation_deg, double distance,
                            double fov_deg, int resolution, const Vec3& up,
                            double azimuth_offset_deg, const Vec3& target) {
  if (n < 2) throw Error::data("orbit_trajectory: need n >= 2");
  if (!(distance > 0)) throw Error::data("orbit_trajectory: distance must be positive");
  const Vec3 w = up.normalized();
  // Orthonormal basis of the orbit plane.
  Vec3 a = std::abs(w.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  a = (a - w * w.dot(a)).normalized();
  const Vec3 b = w.cross(a);

  const double f = focal_from_fov_deg(fov_deg, resolution);
  const double el = elevation_deg * kPi / 180.0;
  Trajectory traj;
  traj.kind = TrajectoryKind::orbit;
  traj.cameras.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double az = (azimuth_offset_deg + 360.0 * i / n) * kPi / 180.0;
    const Vec3 c = target +
                   distance * (std::cos(el) * (std::cos(az) * a + std::sin(az) * b) +
                               std::sin(el) * w);
    traj.cameras.push_back(
        Camera::look_at(c, target, f, resolution, resolution, w));
  }
  return traj;
}

namespace {

// Natural cubic spline through (t_i, y_i); returns second derivatives.
std::vector<double> natural_spline_m(const std::vector<double>& t,
                                     const std::vector<double>& y) {
  const std::size_t n = t.size();
  std::vector<double> m(n, 0.0);
  if (n < 3) return m;
  std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = t[i] - t[i - 1];
    const double h1 = t[i + 1] - t[i];
    a[i] = h0;
    b[i] = 2.0 * (h0 + h1);
    c[i] = h1;
    d[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
  }
  // Thomas algorithm over the interior rows.
  for (std::size_t i = 2; i + 1 < n; ++i) {
    const double f = a[i] / b[i - 1];
    b[i] -= f * c[i - 1];
    d[i] -= f * d[i - 1];
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m[i] = (d[i] - c[i] * (i + 2 <= n - 1 ? m[i + 1] : 0.0)) / b[i];
    if (i == 1) break;
  }
  return m;
}

double spline_eval(const std::vector<double>& t, const std::vector<double>& y,
                   const std::vector<double>& m, std::size_t seg, double x) {
  const double h = t[seg + 1] - t[seg];
  const double u = (t[seg + 1] - x) / h;
  const double v = (x - t[seg]) / h;
  return u * y[seg] + v * y[seg + 1] +
         ((u * u * u - u) * m[seg] + (v * v * v - v) * m[seg + 1]) * h * h / 6.0;
}

}  // namespace

Trajectory spline_trajectory(const std::vector<Camera>& key_cams, int multiplier,
                             int base_density) {
  if (key_cams.size() < 2)
    throw Error::data("spline_trajectory: need >= 2 key cameras");
  if (multiplier < 1 || base_density < 2)
    throw Error::data("spline_trajectory: bad density parameters");

  const std::size_t m = key_cams.size();
  std::vector<double> t(m, 0.0);
  for (std::size_t i = 1; i < m; ++i) {
    const double chord = (key_cams[i].center() - key_cams[i - 1].center()).norm();
    t[i] = t[i - 1] + std::max(chord, 1e-9);  // chord-length parameterization
  }

  std::vector<std::vector<double>> coords(3, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i) {
    const Vec3 c = key_cams[i].center();
    for (int k = 0; k < 3; ++k) coords[k][i] = c(k);
  }
  std::vector<std::vector<double>> deriv(3);
  for (int k = 0; k < 3; ++k) deriv[k] = natural_spline_m(t, coords[k]);

  std::vector<Eigen::Quaterniond> key_q;
  key_q.reserve(m);
  for (const auto& cam : key_cams) key_q.emplace_back(cam.rotation);

  const int total = std::max(multiplier * base_density, static_cast<int>(m));
  // Samples per segment proportional to chord length; knots are always
  // sampled so key poses are reproduced exactly.
  std::vector<int> per_segment(m - 1, 1);
  int assigned = static_cast<int>(m - 1);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    const int extra = static_cast<int>(
        std::floor((t[i + 1] - t[i]) / t.back() *
                   std::max(0, total - static_cast<int>(m))));
    per_segment[i] += extra;
    assigned += extra;
  }
  for (std::size_t i = 0; assigned < total - 1; i = (i + 1) % (m - 1)) {
    ++per_segment[i];
    ++assigned;
  }

  Trajectory traj;
  traj.kind = TrajectoryKind::spline;
  traj.cameras.reserve(total);
  for (std::size_t seg = 0; seg + 1 < m; ++seg) {
    for (int k = 0; k < per_segment[seg]; ++k) {
      const double frac = static_cast<double>(k) / per_segment[seg];
      const double x = t[seg] + frac * (t[seg + 1] - t[seg]);
      Vec3 center;
      for (int c = 0; c < 3; ++c)
        center(c) = spline_eval(t, coords[c], deriv[c], seg, x);
      const Eigen::Quaterniond q = key_q[seg].slerp(frac, key_q[seg + 1]).normalized();

      Camera cam = key_cams[seg];
      cam.rotation = q.toRotationMatrix();
      cam.translation = -cam.rotation * center;
      cam.focal = key_cams[seg].focal +
                  frac * (key_cams[seg + 1].focal - key_cams[seg].focal);
      traj.cameras.push_back(cam);
    }
  }
  traj.cameras.push_back(key_cams.back());
  return traj;
}

double accumulation_loss(std::span<const double> alpha, EntropySign sign,
                         std::vector<double>* grad) {
  constexpr double kEps = 1e-6;
  if (alpha.empty()) return 0.0;
  if (grad) grad->assign(alpha.size(), 0.0);
  double sum = 0.0;
  const double n = static_cast<double>(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const double a = std::clamp(alpha[i], kEps, 1.0 - kEps);
    const double bce = -(0.5 * std::log(a) + 0.5 * std::log(1.0 - a));
    const double entropy = sign == EntropySign::printed
                               ? -a * std::log(a) + (1.0 - a) * std::log(1.0 - a)
                               : -a * std::log(a) - (1.0 - a) * std::log(1.0 - a);
    sum += bce + entropy;
    if (grad) {
      const double dbce = -(0.5 / a - 0.5 / (1.0 - a));
      const double dent = sign == EntropySign::printed
                              ? -(std::log(a) + std::log(1.0 - a)) - 2.0
                              : std::log((1.0 - a) / a);
      (*grad)[i] = (dbce + dent) / n;
    }
  }
  return sum / n;
}

LossWeights LossWeights::monocular() {
  LossWeights w;
  w.w_l1 = 1.0;
  w.w_ssim = 0.2;
  w.w_lpips = 10.0;
  w.w_mask = 5.0;
  w.w_accum = 5.0;
  w.w_depth = 0.0;  // depth loss not applied in the monocular preset
  w.w_rel_depth = 0.0;
  w.input_view_l1_boost = 10.0;
  w.minibatch = 10;
  return w;
}

LossWeights LossWeights::sparse_view() {
  LossWeights w;
  w.w_l1 = 1.0;
  w.w_ssim = 0.2;
  w.w_lpips = 10.0;
  w.w_mask = 5.0;
  w.w_accum = 0.5;
  w.w_depth = 10.0;
  w.w_rel_depth = 20.0;
  w.input_view_l1_boost = 20.0;
  w.minibatch = 5;
  return w;
}

namespace {

double mean_l1(const Image& a, const Image& b) {
  if (a.data.size() != b.data.size())
    throw Error::data("photometric loss: image shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.data.size());
}

double mask_bce(const Image& alpha, const Image& mask) {
  if (alpha.data.size() != mask.data.size())
    throw Error::data("photometric loss: mask shape mismatch");
  constexpr double kEps = 1e-6;
  double s = 0.0;
  for (std::size_t i = 0; i < alpha.data.size(); ++i) {
    const double a = std::clamp(alpha.data[i], kEps, 1.0 - kEps);
    const double m = mask.data[i];
    s += -(m * std::log(a) + (1.0 - m) * std::log(1.0 - a));
  }
  return s / static_cast<double>(alpha.data.size());
}

}  // namespace

PhotoLossBreakdown weighted_photometric_loss(const PhotometricInputs& in,
                                             const LossWeights& weights,
                                             EntropySign entropy_sign,
                                             std::uint64_t pair_seed) {
  if (in.pred.size() != in.gt.size())
    throw Error::data("photometric loss: pred/gt count mismatch");
  const std::size_t n_views = in.pred.size();
  if (n_views == 0) throw Error::data("photometric loss: no views");

  PhotoLossBreakdown out;

  double l1 = 0.0, ssim_term = 0.0;
  for (std::size_t v = 0; v < n_views; ++v) {
    const double boost =
        (v < in.is_input_view.size() && in.is_input_view[v]) ? weights.input_view_l1_boost
                                                             : 1.0;
    l1 += boost * mean_l1(in.pred[v], in.gt[v]);
    if (weights.w_ssim > 0) ssim_term += 1.0 - ssim(in.pred[v], in.gt[v]);
  }
  out.l1 = weights.w_l1 * l1 / static_cast<double>(n_views);
  out.ssim = weights.w_ssim * ssim_term / static_cast<double>(n_views);
  out.lpips = 0.0;  // LPIPS needs a pretrained network; out of scope here.

  if (!in.alpha.empty()) {
    if (in.alpha.size() != n_views)
      throw Error::data("photometric loss: alpha count mismatch");
    double bce = 0.0;
    std::vector<double> all_alpha;
    for (std::size_t v = 0; v < n_views; ++v) {
      if (!in.gt_mask.empty()) bce += mask_bce(in.alpha[v], in.gt_mask[v]);
      all_alpha.insert(all_alpha.end(), in.alpha[v].data.begin(),
                       in.alpha[v].data.end());
    }
    if (!in.gt_mask.empty())
      out.mask = weights.w_mask * bce / static_cast<double>(n_views);
    out.accum = weights.w_accum * accumulation_loss(all_alpha, entropy_sign);
  }

  if (!in.pred_depth.empty() && (weights.w_depth > 0 || weights.w_rel_depth > 0)) {
    if (in.pred_depth.size() != n_views || in.gt_depth.size() != n_views)
      throw Error::data("photometric loss: depth count mismatch");
    double dl1 = 0.0, rank = 0.0;
    for (std::size_t v = 0; v < n_views; ++v) {
      const DepthMap& p = in.pred_depth[v];
      const DepthMap& g = in.gt_depth[v];
      if (p.depth.size() != g.depth.size())
        throw Error::data("photometric loss: depth shape mismatch");
      std::vector<std::size_t> valid;
      double s = 0.0;
      for (std::size_t i = 0; i < p.depth.size(); ++i) {
        if (!p.valid[i] || !g.valid[i]) continue;
        valid.push_back(i);
        s += std::abs(p.depth[i] - g.depth[i]);
      }
      if (!valid.empty()) dl1 += s / static_cast<double>(valid.size());

      // Pairwise ordinal hinge on sampled pixel pairs.
      if (weights.w_rel_depth > 0 && valid.size() >= 2) {
        constexpr int kPairs = 4096;
        constexpr double kMargin = 1e-4;
        Rng rng = Rng::stream(pair_seed, 0xD3A7, v);
        double h = 0.0;
        for (int k = 0; k < kPairs; ++k) {
          const std::size_t ia = valid[rng.uniform_int(valid.size())];
          const std::size_t ib = valid[rng.uniform_int(valid.size())];
          if (ia == ib) continue;
          const double sign_gt = g.depth[ia] > g.depth[ib] ? 1.0 : -1.0;
          h += std::max(0.0, -sign_gt * (p.depth[ia] - p.depth[ib]) + kMargin);
        }
        rank += h / kPairs;
      }
    }
    out.depth = weights.w_depth * dl1 / static_cast<double>(n_views);
    out.rel_depth = weights.w_rel_depth * rank / static_cast<double>(n_views);
  }

  out.total = out.l1 + out.ssim + out.lpips + out.mask + out.accum + out.depth +
              out.rel_depth;
  return out;
}

PointCloud init_point_cloud(const std::vector<DepthMap>& depths,
                            const std::vector<Camera>& cams,
                            const std::vector<Image>* rgbs,
                            FusionStatistic statistic, const FusionOptions& opts) {
  if (depths.empty()) throw Error::data("init_point_cloud: no depth maps");
  std::size_t input_valid = 0;
  for (const auto& d : depths) input_valid += d.valid_count();
  if (input_valid == 0)
    throw Error::data("init_point_cloud: no valid depth anywhere");

  std::vector<DepthMap> cleaned = depths;
  if (depths.size() >= 2) {
    cleaned = geometric_filter(depths, cams, opts);
    cleaned = geometric_fusion(cleaned, cams, statistic, opts);
    std::size_t survived = 0;
    for (const auto& d : cleaned) survived += d.valid_count();
    if (survived == 0) {
      // Fully inconsistent depths (e.g. a barely trained model): fall back to
      // the unfiltered back-projection so the pipeline still emits a cloud.
      std::fprintf(stderr,
                   "warning: geometric filtering removed every pixel; "
                   "writing the unfiltered initialization cloud\n");
      cleaned = depths;
    }
  }
  PointCloud out;
  for (std::size_t v = 0; v < cleaned.size(); ++v) {
    const PointCloud pc =
        backproject(cleaned[v], cams[v], rgbs ? &(*rgbs)[v] : nullptr);
    out.points.insert(out.points.end(), pc.points.begin(), pc.points.end());
    if (rgbs) out.colors.insert(out.colors.end(), pc.colors.begin(), pc.colors.end());
  }
  return out;
}

}  // namespace matrixkit
