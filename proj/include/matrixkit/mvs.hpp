#pragma once

#include <vector>

#include "matrixkit/depthmap.hpp"
#include "matrixkit/geometry.hpp"
#include "matrixkit/image.hpp"

namespace matrixkit {

// Back-projects every valid pixel to a world point. The depth grid may be a
// lower resolution than the camera raster; pixel centers scale accordingly.
// Colors, when an RGB image is given, are sampled at the matching pixel.
PointCloud backproject(const DepthMap& d, const Camera& cam,
                       const Image* rgb = nullptr);

struct Reprojection {
  double u = 0.0;
  double v = 0.0;           // source-pixel coordinates at depth-grid scale
  double depth = 0.0;       // depth in the source camera
  bool in_view = false;     // inside source bounds and in front of the camera
};

// Projects every valid reference pixel into a source camera.
std::vector<Reprojection> reproject(const DepthMap& d_ref, const Camera& cam_ref,
                                    const Camera& cam_src);

struct FusionOptions {
  double pix_thresh = 1.0;    // forward-backward reprojection error, pixels
  double depth_thresh = 0.01; // relative depth discrepancy
  int min_consistent = 1;     // source views that must agree
};

// Cross-view consistency filter: a reference pixel survives iff enough source
// views round-trip to within the pixel and relative-depth thresholds. Output
// masks are subsets of the input masks.
std::vector<DepthMap> geometric_filter(const std::vector<DepthMap>& depths,
                                       const std::vector<Camera>& cams,
                                       const FusionOptions& opts = {});

enum class FusionStatistic { mean, median };

// Replaces each reference depth by the chosen statistic of its own value and
// all consistent values gathered from the source views.
std::vector<DepthMap> geometric_fusion(const std::vector<DepthMap>& depths,
                                       const std::vector<Camera>& cams,
                                       FusionStatistic statistic,
                                       const FusionOptions& opts = {});

}  // namespace matrixkit
