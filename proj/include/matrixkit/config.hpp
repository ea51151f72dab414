#pragma once

#include <string>

#include "matrixkit/diffusion.hpp"
#include "matrixkit/mvs.hpp"
#include "matrixkit/tasks.hpp"

namespace matrixkit {

// One JSON document configures every stage of a run; defaults here are the
// desk-scale setup. Unknown keys are rejected so misspelled guidance scales
// or codec constants cannot pass silently. A full snapshot is written into
// every run directory.
struct RunConfig {
  ModelConfig model;
  int schedule_steps = 200;
  std::string schedule_kind = "vp_cosine";
  CodecConfig codec;
  TrainConfig train;
  GuidanceConfig guidance;
  DatasetGenConfig gen;
  FusionOptions fusion;
  FusionStatistic fusion_statistic = FusionStatistic::median;
  CompleteSceneOptions complete;
  double fov_deg = 50.0;

  Schedule make_schedule() const { return Schedule::make(schedule_steps, schedule_kind); }

  static RunConfig from_json_text(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string to_json_text() const;
};

}  // namespace matrixkit
