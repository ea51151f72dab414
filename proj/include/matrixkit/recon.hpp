#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "matrixkit/depthmap.hpp"
#include "matrixkit/geometry.hpp"
#include "matrixkit/image.hpp"
#include "matrixkit/mvs.hpp"

namespace matrixkit {

enum class TrajectoryKind { orbit, spline };

struct Trajectory {
  std::vector<Camera> cameras;
  TrajectoryKind kind = TrajectoryKind::orbit;
};

// Look-at cameras evenly spaced in azimuth at fixed elevation and distance,
// pointed at the world origin. `up` selects the orbit axis (z for synthetic
// scenes) and the camera roll; the offset rotates the starting azimuth.
Trajectory orbit_trajectory(int n, double elevation_deg, double distance,
                            double fov_deg, int resolution,
                            const Vec3& up = Vec3(0, 0, 1),
                            double azimuth_offset_deg = 0.0,
                            const Vec3& target = Vec3::Zero());

// Camera centers interpolated by a natural cubic spline through the key
// centers (chord-length parameterization), orientations by piecewise
// spherical interpolation. Every key pose is reproduced exactly at its knot;
// the sampled count is multiplier * base_density.
Trajectory spline_trajectory(const std::vector<Camera>& key_cams,
                             int multiplier = 3, int base_density = 80);

enum class EntropySign { printed, corrected };

// Binary cross-entropy against 0.5 plus an entropy term pushing accumulation
// values toward {0, 1}. `printed` keeps the sign of the published expression
// (-a log a + (1-a) log(1-a)); `corrected` uses the symmetric entropy.
// Inputs are clamped to [1e-6, 1 - 1e-6]; the mean over elements is returned
// and the per-element gradient written when grad is non-null.
double accumulation_loss(std::span<const double> alpha, EntropySign sign,
                         std::vector<double>* grad = nullptr);

struct LossWeights {
  double w_l1 = 1.0;
  double w_ssim = 0.2;
  double w_lpips = 10.0;  // term evaluates to 0: LPIPS needs a pretrained net
  double w_mask = 5.0;
  double w_accum = 5.0;
  double w_depth = 0.0;
  double w_rel_depth = 0.0;
  double input_view_l1_boost = 10.0;
  int minibatch = 10;

  static LossWeights monocular();
  static LossWeights sparse_view();
};

struct PhotometricInputs {
  std::vector<Image> pred;
  std::vector<Image> gt;
  std::vector<Image> alpha;          // rendered accumulation, 1 channel
  std::vector<Image> gt_mask;        // foreground masks, 1 channel
  std::vector<DepthMap> pred_depth;  // optional, empty disables depth terms
  std::vector<DepthMap> gt_depth;
  std::vector<bool> is_input_view;   // L1 boost applies to these
};

// Weighted contributions; total is their exact sum.
struct PhotoLossBreakdown {
  double l1 = 0;
  double ssim = 0;
  double lpips = 0;
  double mask = 0;
  double accum = 0;
  double depth = 0;
  double rel_depth = 0;
  double total = 0;
};

PhotoLossBreakdown weighted_photometric_loss(const PhotometricInputs& in,
                                             const LossWeights& weights,
                                             EntropySign entropy_sign,
                                             std::uint64_t pair_seed = 0);

// Back-projects every key-view depth after geometric filtering and fusion and
// concatenates the clouds; the downstream splat optimizer consumes this as
// its initialization. Throws when nothing valid survives.
PointCloud init_point_cloud(const std::vector<DepthMap>& depths,
                            const std::vector<Camera>& cams,
                            const std::vector<Image>* rgbs,
                            FusionStatistic statistic = FusionStatistic::median,
                            const FusionOptions& opts = {});

}  // namespace matrixkit
