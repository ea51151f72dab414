#pragma once

#include <json.hpp>

#include "matrixkit/geometry.hpp"
#include "matrixkit/recon.hpp"

namespace matrixkit {

using Json = nlohmann::json;

// Camera schema shared by scene meta.json and trajectory.json: row-major
// rotation, translation, focal, principal point, resolution, all as decimal
// text in JSON numbers.
Json camera_to_json(const Camera& cam);
Camera camera_from_json(const Json& j);

Json normalization_to_json(const NormalizationSpec& spec);
NormalizationSpec normalization_from_json(const Json& j);

const char* normalization_mode_name(NormalizationMode mode);
NormalizationMode normalization_mode_from_name(const std::string& name);

// trajectory.json: ordered camera list using the camera schema above.
Json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const Json& j);

Json camera_list_to_json(const std::vector<Camera>& cams);
std::vector<Camera> camera_list_from_json(const Json& j);

}  // namespace matrixkit
