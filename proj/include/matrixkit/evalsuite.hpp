#pragma once

#include <vector>

#include "matrixkit/depthmap.hpp"
#include "matrixkit/geometry.hpp"
#include "matrixkit/image.hpp"

namespace matrixkit {

// Fraction of ordered camera pairs (i, j), i != j, whose relative rotation
// error is below the threshold.
double relative_rotation_accuracy(const std::vector<Camera>& pred,
                                  const std::vector<Camera>& gt,
                                  double thresh_deg = 15.0);

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

// Least-squares similarity transform (Umeyama closed form) mapping src onto
// dst. Throws on degenerate src (all points coincident).
SimilarityTransform umeyama_alignment(const std::vector<Vec3>& src,
                                      const std::vector<Vec3>& dst);

// Camera centers are aligned to ground truth with a joint similarity
// transform; scene scale is the maximum ground-truth center distance to the
// centroid. Returns the fraction of centers within thresh * scale.
double camera_center_accuracy(const std::vector<Camera>& pred,
                              const std::vector<Camera>& gt,
                              double thresh = 0.1);

struct DepthMetrics {
  double abs_rel = 0;  // mean |p-g| / g
  double log10 = 0;    // mean |log10 p - log10 g|
  double rms = 0;
  double delta1 = 0;   // max(p/g, g/p) < 1.25
  double delta2 = 0;   // < 1.25^2
  double delta3 = 0;   // < 1.25^3
  double rel = 0;      // abs_rel * 100
  double tau = 0;      // max(p/g, g/p) < 1.03
};

// Computed over jointly-valid pixels; throws when the joint mask is empty.
DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt);

struct ImageMetrics {
  double psnr = 0;
  double ssim = 0;
};

// PSNR against peak 1.0, capped at the 99 dB sentinel for identical images.
double psnr(const Image& pred, const Image& gt);

// SSIM with k1=0.01, k2=0.03 and an 11x11 Gaussian window (sigma 1.5),
// averaged over fully-interior windows and channels.
double ssim(const Image& pred, const Image& gt);

ImageMetrics image_metrics(const Image& pred, const Image& gt);

struct PointCloudMetrics {
  double accuracy = 0;      // mean pred -> nearest gt distance
  double completeness = 0;  // mean gt -> nearest pred distance
  double overall = 0;
};

// Exact nearest neighbors via a uniform spatial grid.
PointCloudMetrics pointcloud_metrics(const PointCloud& pred, const PointCloud& gt);

}  // namespace matrixkit
