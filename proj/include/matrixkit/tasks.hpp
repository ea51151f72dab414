#pragma once

#include <optional>
#include <string>
#include <vector>

#include "matrixkit/diffusion.hpp"
#include "matrixkit/recon.hpp"

namespace matrixkit {

struct PosedImage {
  Image rgb;
  Camera camera;
};

// Everything the downstream tasks need to drive the sampler.
struct TaskContext {
  const Backbone* model = nullptr;
  Schedule schedule;
  GuidanceConfig guidance;
  CodecConfig codec;
  double fov_deg = 50.0;  // assumed intrinsics for unposed inputs
  std::uint64_t seed = 0;
};

// Pose estimation: RGB conditions on every view plus the identity ray map on
// view 0 (and depth conditions when given); generated ray maps are decoded
//到 cameras via least-squares recovery. View 0 is returned as the identity
// camera exactly, never resampled.
std::vector<Camera> estimate_poses(const TaskContext& ctx,
                                   const std::vector<Image>& images,
                                   const std::vector<DepthMap>* known_depths = nullptr);

// Novel view synthesis for each target camera; target sets beyond the view
// budget are processed in chunks (conditions replicated, targets partitioned
// round-robin).
std::vector<Image> synthesize_views(const TaskContext& ctx,
                                    const std::vector<PosedImage>& posed,
                                    const std::vector<Camera>& target_cams);

// Depth prediction for every input view (monocular supported). The generated
// mask channel is thresholded at 0.5; an all-invalid result carries a warning
// on stderr.
std::vector<DepthMap> predict_depth(const TaskContext& ctx,
                                    const std::vector<PosedImage>& posed);

struct CompleteSceneOptions {
  int key_views = 8;          // monocular branch: key views on the orbit
  int trajectory_views = 24;  // dense trajectory length
  int spline_multiplier = 3;  // few-shot branch: views = multiplier * base
  FusionStatistic fusion_statistic = FusionStatistic::median;
  FusionOptions fusion;
};

struct ScenePackage {
  std::string dir;
  std::vector<Camera> cameras;  // key views first, then interpolated views
  int key_view_count = 0;
  Trajectory trajectory;
  PointCloud init_cloud;
};

// Scene completion pipeline. Monocular: synthesize key views on an orbit,
// predict their depths, interpolate. Few-shot: estimate poses (skipped when
// given), predict depths, synthesize along a spline trajectory. Every stage
// serializes its outputs into out_dir before the next begins and appends one
// line to stages.log; re-running resumes from the last completed stage.
ScenePackage complete_scene(const TaskContext& ctx,
                            const std::vector<Image>& images,
                            const std::optional<std::vector<Camera>>& poses,
                            const std::string& out_dir,
                            const CompleteSceneOptions& opts = {});

}  // namespace matrixkit
