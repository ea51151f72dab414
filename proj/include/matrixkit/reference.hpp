#pragma once

// Serial reference implementations and brute-force oracles. Tests compare the
// production kernels against these; the benchmark tool reports the speedups.
// Nothing here is linked into the main library.

#include "matrixkit/backbone.hpp"
#include "matrixkit/evalsuite.hpp"

namespace matrixkit::reference {

// Plain-loop multi-head attention with the same RoPE convention as the
// production kernel; no blocking, no parallelism.
void mha_forward_serial(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                        const Eigen::MatrixXd& v, int heads,
                        const std::vector<TokenTag>& q_tags,
                        const std::vector<TokenTag>& k_tags, Eigen::MatrixXd& out);

// Quaternion-route recomputation of relative rotation accuracy.
double rra_bruteforce(const std::vector<Camera>& pred, const std::vector<Camera>& gt,
                      double thresh_deg = 15.0);

// Log-ratio route over jointly-valid pixels.
DepthMetrics depth_metrics_bruteforce(const DepthMap& pred, const DepthMap& gt);

// O(N^2) nearest neighbors.
PointCloudMetrics pointcloud_metrics_bruteforce(const PointCloud& pred,
                                                const PointCloud& gt);

// Direct windowed SSIM without separable filtering.
double ssim_direct(const Image& pred, const Image& gt);

double psnr_direct(const Image& pred, const Image& gt);

}  // namespace matrixkit::reference
