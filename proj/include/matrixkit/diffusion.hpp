#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "matrixkit/backbone.hpp"
#include "matrixkit/rng.hpp"
#include "matrixkit/synthscene.hpp"

namespace matrixkit {

// Variance-preserving noise schedule: alpha_t^2 + sigma_t^2 = 1, alpha
// decreasing, sigma increasing, endpoints (1, 0) and (0, 1).
struct Schedule {
  int T = 200;
  Eigen::VectorXd alpha;
  Eigen::VectorXd sigma;

  static Schedule make(int T, const std::string& kind = "vp_cosine");
};

// x_t = alpha_t x0 + sigma_t eps
Eigen::VectorXd corrupt(const Eigen::VectorXd& x0, int t,
                        const Eigen::VectorXd& noise, const Schedule& s);

// v = alpha_t eps - sigma_t x0
Eigen::VectorXd v_target(const Eigen::VectorXd& x0, int t,
                         const Eigen::VectorXd& noise, const Schedule& s);

enum class Task : int { nvs = 0, pose = 1, depth = 2, random = 3 };
const char* task_name(Task t);

enum class PlanFlag : std::uint8_t { absent = 0, condition = 1, target = 2 };

// Per (view, modality) role assignment for one training/inference pass.
struct MaskPlan {
  Task task = Task::random;
  std::vector<std::array<PlanFlag, kNumModalities>> flags;
  bool cond_dropped = false;

  PlanFlag flag(int view, Modality m) const {
    return flags[view][static_cast<int>(m)];
  }
  int target_count() const;
};

struct CurriculumConfig {
  std::array<double, 4> task_ratios = {0.3, 0.3, 0.3, 0.1};  // nvs:pose:depth:random
  double cond_dropout = 0.1;
};

// Task-specific assignments per the training curriculum; tasks whose
// modalities are unavailable fall back to the random task over what exists.
MaskPlan sample_mask_plan(Rng& rng, int n_views,
                          std::array<bool, kNumModalities> modalities_present,
                          const CurriculumConfig& curriculum = {});

// Fixed shift/scale codecs between domain objects and model-space maps.
struct CodecConfig {
  double disparity_shift = 2.0;
  double disparity_scale = 2.0;
  double moment_scale = 1.0;  // ray-map moments multiplier
};

ViewMap encode_rgb_map(const Image& img, int view_id);
Image decode_rgb_map(const ViewMap& m, int res);
ViewMap encode_raymap(const RayMap& rm, int view_id, const CodecConfig& codec);
RayMap decode_raymap(const ViewMap& m, int res, const CodecConfig& codec);
ViewMap encode_depth_map(const DepthMap& d, int view_id, const CodecConfig& codec);
// Mask channel thresholded at 0.5 in the decoded [0,1] domain.
DepthMap decode_depth_map(const ViewMap& m, int res, const CodecConfig& codec);
// Ones for the mask channel, ground-truth validity for the disparity channel.
Eigen::VectorXd depth_loss_weight(const DepthMap& d);

// Builds model inputs for the selected scene views under a mask plan: cameras
// are re-normalized so slot 0 is the identity camera, targets are corrupted
// at timestep t with noise drawn from rng.
Batch assemble_batch(const ModelConfig& cfg, const std::vector<ViewBundle>& views,
                     const MaskPlan& plan, const Schedule& schedule, int t,
                     const CodecConfig& codec, Rng& rng);

struct TrainConfig {
  int steps = 4000;
  double lr = 3e-4;
  int warmup_steps = 100;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  int batch_size = 2;
  int n_views = 4;
  std::uint64_t seed = 0;
  CurriculumConfig curriculum;
  int checkpoint_every = 0;  // 0 = only the final checkpoint
  // Randomize the view-to-slot assignment per sample. Disable for overfit
  // runs: a fixed reference view makes memorization markedly easier.
  bool shuffle_views = true;
};

struct LossRecord {
  int step;
  Task task;
  double loss;
};

struct TrainResult {
  std::vector<LossRecord> trace;
};

// AdamW with decoupled weight decay and linear warmup into a constant rate.
// Deterministic for a fixed seed. Aborts with a numeric error naming the step
// and plan when the loss stops being finite.
TrainResult train(Backbone& model, const std::vector<Scene>& dataset,
                  const Schedule& schedule, const TrainConfig& cfg,
                  const CodecConfig& codec,
                  const std::function<void(int step)>& on_checkpoint = {});

struct GuidanceConfig {
  double rgb = 1.5;
  double pose = 1.5;
  double depth = 1.0;
  int steps = 50;
  std::string sampler = "ddim";

  double scale(Modality m) const {
    switch (m) {
      case Modality::rgb: return rgb;
      case Modality::pose: return pose;
      case Modality::depth: return depth;
    }
    return 1.0;
  }
  bool any_guided() const { return rgb != 1.0 || pose != 1.0 || depth != 1.0; }
};

struct SampleRequest {
  std::vector<ViewMap> condition;                  // encoded condition maps
  std::vector<std::pair<int, Modality>> targets;   // (view_id, modality) slots
};

// Deterministic DDIM-style sampler over a strided sub-schedule with
// per-modality classifier-free guidance combined in v-space. Scale 1.0
// reproduces conditional sampling bit-exactly (the unconditional branch is
// then never evaluated). Returns model-space x0 estimates per target.
std::vector<ViewMap> sample(const Backbone& model, const SampleRequest& request,
                            const Schedule& schedule, const GuidanceConfig& guide,
                            Rng& rng);

}  // namespace matrixkit
