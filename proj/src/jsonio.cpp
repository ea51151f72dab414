#include "matrixkit/jsonio.hpp"

#include "matrixkit/error.hpp"

namespace matrixkit {

Json camera_to_json(const Camera& cam) {
  Json j;
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[r * 3 + c] = cam.rotation(r, c);
  j["rotation"] = rot;
  j["translation"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
  j["focal"] = cam.focal;
  j["principal_point"] = {cam.principal_point.x(), cam.principal_point.y()};
  j["resolution"] = {cam.width, cam.height};
  return j;
}

Camera camera_from_json(const Json& j) {
  Camera cam;
  try {
    const auto rot = j.at("rotation").get<std::vector<double>>();
    if (rot.size() != 9) throw Error::data("camera rotation must have 9 entries");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rot[r * 3 + c];
    const auto t = j.at("translation").get<std::vector<double>>();
    if (t.size() != 3) throw Error::data("camera translation must have 3 entries");
    cam.translation = Vec3(t[0], t[1], t[2]);
    cam.focal = j.at("focal").get<double>();
    const auto pp = j.at("principal_point").get<std::vector<double>>();
    if (pp.size() != 2) throw Error::data("principal point must have 2 entries");
    cam.principal_point = Vec2(pp[0], pp[1]);
    const auto res = j.at("resolution").get<std::vector<int>>();
    if (res.size() != 2) throw Error::data("resolution must have 2 entries");
    cam.width = res[0];
    cam.height = res[1];
  } catch (const Json::exception& e) {
    throw Error::data(std::string("malformed camera JSON: ") + e.what());
  }
  return cam;
}

const char* normalization_mode_name(NormalizationMode mode) {
  switch (mode) {
    case NormalizationMode::ray_intersection: return "ray-intersection";
    case NormalizationMode::first_view_depth_median: return "first-view-depth-median";
    case NormalizationMode::max_camera_distance: return "max-camera-distance";
  }
  return "ray-intersection";
}

NormalizationMode normalization_mode_from_name(const std::string& name) {
  if (name == "ray-intersection") return NormalizationMode::ray_intersection;
  if (name == "first-view-depth-median") return NormalizationMode::first_view_depth_median;
  if (name == "max-camera-distance") return NormalizationMode::max_camera_distance;
  throw Error::data("unknown normalization mode: " + name);
}

Json normalization_to_json(const NormalizationSpec& spec) {
  Json j;
  j["mode"] = normalization_mode_name(spec.mode);
  j["origin"] = {spec.origin.x(), spec.origin.y(), spec.origin.z()};
  j["scale"] = spec.scale;
  return j;
}

NormalizationSpec normalization_from_json(const Json& j) {
  NormalizationSpec spec;
  try {
    spec.mode = normalization_mode_from_name(j.at("mode").get<std::string>());
    const auto o = j.at("origin").get<std::vector<double>>();
    if (o.size() != 3) throw Error::data("normalization origin must have 3 entries");
    spec.origin = Vec3(o[0], o[1], o[2]);
    spec.scale = j.at("scale").get<double>();
  } catch (const Json::exception& e) {
    throw Error::data(std::string("malformed normalization JSON: ") + e.what());
  }
  return spec;
}

Json camera_list_to_json(const std::vector<Camera>& cams) {
  Json arr = Json::array();
  for (const auto& cam : cams) arr.push_back(camera_to_json(cam));
  return arr;
}

std::vector<Camera> camera_list_from_json(const Json& j) {
  std::vector<Camera> cams;
  for (const auto& jc : j) cams.push_back(camera_from_json(jc));
  return cams;
}

Json trajectory_to_json(const Trajectory& traj) {
  Json j;
  j["schema_version"] = 1;
  j["kind"] = traj.kind == TrajectoryKind::orbit ? "orbit" : "spline";
  j["cameras"] = camera_list_to_json(traj.cameras);
  return j;
}

Trajectory trajectory_from_json(const Json& j) {
  Trajectory traj;
  try {
    traj.kind = j.at("kind").get<std::string>() == "orbit" ? TrajectoryKind::orbit
                                                           : TrajectoryKind::spline;
    traj.cameras = camera_list_from_json(j.at("cameras"));
  } catch (const Json::exception& e) {
    throw Error::data(std::string("malformed trajectory JSON: ") + e.what());
  }
  return traj;
}

}  // namespace matrixkit
