#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace matrixkit {

// Per-pixel camera-frame z with a validity mask. Invalid pixels carry depth 0
// and must never influence any statistic, fusion output or point cloud.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;       // row-major H*W
  std::vector<std::uint8_t> valid; // 1 = valid

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h) {
    depth.assign(static_cast<std::size_t>(w) * h, 0.0);
    valid.assign(static_cast<std::size_t>(w) * h, 0);
  }

  std::size_t idx(int y, int x) const {
    return static_cast<std::size_t>(y) * width + x;
  }
  double& at(int y, int x) { return depth[idx(y, x)]; }
  double at(int y, int x) const { return depth[idx(y, x)]; }
  bool is_valid(int y, int x) const { return valid[idx(y, x)] != 0; }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
  }
};

// Inverse depth after an affine codec: disparity = (1/depth - shift) / scale.
struct DisparityMap {
  int width = 0;
  int height = 0;
  std::vector<double> disparity;
  std::vector<std::uint8_t> valid;
  double shift = 0.0;
  double scale = 1.0;
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;  // world frame, scene units
  std::vector<Eigen::Vector3d> colors;  // optional, [0,1]; empty or same size

  bool has_colors() const { return !colors.empty(); }
  std::size_t size() const { return points.size(); }
};

// Valid pixels map to (1/depth - shift)/scale; invalid pixels map to 0 with
// mask 0 so they can never leak into statistics.
DisparityMap encode_disparity(const DepthMap& d, double shift, double scale);

// Valid pixels map to 1/(disparity*scale + shift). Decoded values implying
// depth <= 0 or non-finite are demoted to invalid.
DepthMap decode_disparity(const DisparityMap& dm);

}  // namespace matrixkit
