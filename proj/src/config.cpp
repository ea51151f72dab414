#include "matrixkit/config.hpp"

#include <set>

#include "matrixkit/error.hpp"
#include "matrixkit/io.hpp"
#include "matrixkit/jsonio.hpp"

namespace matrixkit {

namespace {

constexpr int kSchemaVersion = 1;

// Tracks consumed keys of one JSON object and rejects leftovers.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw Error::data("config: expected an object at " + path_);
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw Error::data("config: bad value for " + path_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key))
        throw Error::data("config: unknown key " + path_ + "." + key);
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_model(const Json& j, ModelConfig& m) {
  StrictObject o(j, "model");
  o.get("hidden_enc", m.hidden_enc);
  o.get("hidden_dec", m.hidden_dec);
  o.get("enc_blocks", m.enc_blocks);
  o.get("dec_blocks", m.dec_blocks);
  o.get("heads", m.heads);
  o.get("max_views", m.max_views);
  o.get("rgb_res", m.rgb_res);
  o.get("rgb_patch", m.rgb_patch);
  o.get("ray_res", m.ray_res);
  o.get("ray_patch", m.ray_patch);
  o.get("depth_res", m.depth_res);
  o.get("depth_patch", m.depth_patch);
  o.get("time_embed_dim", m.time_embed_dim);
  o.get("view_freq_base", m.view_freq_base);
  o.get("modality_freq_base", m.modality_freq_base);
  o.get("time_freq_base", m.time_freq_base);
  o.finish();
}

Json model_to_json(const ModelConfig& m) {
  Json j;
  j["hidden_enc"] = m.hidden_enc;
  j["hidden_dec"] = m.hidden_dec;
  j["enc_blocks"] = m.enc_blocks;
  j["dec_blocks"] = m.dec_blocks;
  j["heads"] = m.heads;
  j["max_views"] = m.max_views;
  j["rgb_res"] = m.rgb_res;
  j["rgb_patch"] = m.rgb_patch;
  j["ray_res"] = m.ray_res;
  j["ray_patch"] = m.ray_patch;
  j["depth_res"] = m.depth_res;
  j["depth_patch"] = m.depth_patch;
  j["time_embed_dim"] = m.time_embed_dim;
  j["view_freq_base"] = m.view_freq_base;
  j["modality_freq_base"] = m.modality_freq_base;
  j["time_freq_base"] = m.time_freq_base;
  return j;
}

void parse_train(const Json& j, TrainConfig& t) {
  StrictObject o(j, "train");
  o.get("steps", t.steps);
  o.get("lr", t.lr);
  o.get("warmup_steps", t.warmup_steps);
  o.get("weight_decay", t.weight_decay);
  o.get("beta1", t.beta1);
  o.get("beta2", t.beta2);
  o.get("batch_size", t.batch_size);
  o.get("n_views", t.n_views);
  o.get("seed", t.seed);
  o.get("checkpoint_every", t.checkpoint_every);
  o.get("shuffle_views", t.shuffle_views);
  if (const Json* c = o.child("curriculum")) {
    StrictObject oc(*c, "train.curriculum");
    std::vector<double> ratios;
    oc.get("task_ratios", ratios);
    if (!ratios.empty()) {
      if (ratios.size() != 4)
        throw Error::data("config: train.curriculum.task_ratios needs 4 entries");
      for (int i = 0; i < 4; ++i) t.curriculum.task_ratios[i] = ratios[i];
    }
    oc.get("cond_dropout", t.curriculum.cond_dropout);
    oc.finish();
  }
  o.finish();
}

Json train_to_json(const TrainConfig& t) {
  Json j;
  j["steps"] = t.steps;
  j["lr"] = t.lr;
  j["warmup_steps"] = t.warmup_steps;
  j["weight_decay"] = t.weight_decay;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["batch_size"] = t.batch_size;
  j["n_views"] = t.n_views;
  j["seed"] = t.seed;
  j["checkpoint_every"] = t.checkpoint_every;
  j["shuffle_views"] = t.shuffle_views;
  j["curriculum"]["task_ratios"] = t.curriculum.task_ratios;
  j["curriculum"]["cond_dropout"] = t.curriculum.cond_dropout;
  return j;
}

void parse_gen(const Json& j, DatasetGenConfig& g) {
  StrictObject o(j, "gen");
  o.get("scenes", g.scenes);
  o.get("views_per_scene", g.views_per_scene);
  o.get("resolution", g.resolution);
  o.get("depth_resolution", g.depth_resolution);
  if (const Json* s = o.child("scene")) {
    StrictObject os(*s, "gen.scene");
    os.get("min_primitives", g.scene.min_primitives);
    os.get("max_primitives", g.scene.max_primitives);
    os.get("min_size", g.scene.min_size);
    os.get("max_size", g.scene.max_size);
    os.get("lights", g.scene.lights);
    os.get("ambient", g.scene.ambient);
    os.get("mask_dropout", g.scene.mask_dropout);
    std::vector<double> bg;
    os.get("background", bg);
    if (!bg.empty()) {
      if (bg.size() != 3) throw Error::data("config: gen.scene.background needs 3 entries");
      g.scene.background = Vec3(bg[0], bg[1], bg[2]);
    }
    os.finish();
  }
  if (const Json* c = o.child("camera")) {
    StrictObject oc(*c, "gen.camera");
    oc.get("fov_deg", g.camera.fov_deg);
    oc.get("azimuth_min_deg", g.camera.azimuth_min_deg);
    oc.get("azimuth_max_deg", g.camera.azimuth_max_deg);
    oc.get("elevation_min_deg", g.camera.elevation_min_deg);
    oc.get("elevation_max_deg", g.camera.elevation_max_deg);
    oc.get("distance_min", g.camera.distance_min);
    oc.get("distance_max", g.camera.distance_max);
    oc.finish();
  }
  o.finish();
}

Json gen_to_json(const DatasetGenConfig& g) {
  Json j;
  j["scenes"] = g.scenes;
  j["views_per_scene"] = g.views_per_scene;
  j["resolution"] = g.resolution;
  j["depth_resolution"] = g.depth_resolution;
  j["scene"]["min_primitives"] = g.scene.min_primitives;
  j["scene"]["max_primitives"] = g.scene.max_primitives;
  j["scene"]["min_size"] = g.scene.min_size;
  j["scene"]["max_size"] = g.scene.max_size;
  j["scene"]["lights"] = g.scene.lights;
  j["scene"]["ambient"] = g.scene.ambient;
  j["scene"]["mask_dropout"] = g.scene.mask_dropout;
  j["scene"]["background"] = {g.scene.background.x(), g.scene.background.y(),
                              g.scene.background.z()};
  j["camera"]["fov_deg"] = g.camera.fov_deg;
  j["camera"]["azimuth_min_deg"] = g.camera.azimuth_min_deg;
  j["camera"]["azimuth_max_deg"] = g.camera.azimuth_max_deg;
  j["camera"]["elevation_min_deg"] = g.camera.elevation_min_deg;
  j["camera"]["elevation_max_deg"] = g.camera.elevation_max_deg;
  j["camera"]["distance_min"] = g.camera.distance_min;
  j["camera"]["distance_max"] = g.camera.distance_max;
  return j;
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error::data(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig cfg;
  StrictObject o(j, "config");
  int version = kSchemaVersion;
  o.get("schema_version", version);
  if (version != kSchemaVersion)
    throw Error::data("config: unsupported schema_version " + std::to_string(version));

  if (const Json* m = o.child("model")) parse_model(*m, cfg.model);
  if (const Json* s = o.child("schedule")) {
    StrictObject os(*s, "schedule");
    os.get("steps", cfg.schedule_steps);
    os.get("kind", cfg.schedule_kind);
    os.finish();
  }
  if (const Json* c = o.child("codec")) {
    StrictObject oc(*c, "codec");
    oc.get("disparity_shift", cfg.codec.disparity_shift);
    oc.get("disparity_scale", cfg.codec.disparity_scale);
    oc.get("moment_scale", cfg.codec.moment_scale);
    oc.finish();
  }
  if (const Json* t = o.child("train")) parse_train(*t, cfg.train);
  if (const Json* g = o.child("guidance")) {
    StrictObject og(*g, "guidance");
    og.get("rgb", cfg.guidance.rgb);
    og.get("pose", cfg.guidance.pose);
    og.get("depth", cfg.guidance.depth);
    og.get("steps", cfg.guidance.steps);
    og.get("sampler", cfg.guidance.sampler);
    og.finish();
  }
  if (const Json* g = o.child("gen")) parse_gen(*g, cfg.gen);
  if (const Json* f = o.child("fusion")) {
    StrictObject of(*f, "fusion");
    of.get("pix_thresh", cfg.fusion.pix_thresh);
    of.get("depth_thresh", cfg.fusion.depth_thresh);
    of.get("min_consistent", cfg.fusion.min_consistent);
    std::string statistic;
    of.get("statistic", statistic);
    if (!statistic.empty()) {
      if (statistic == "mean")
        cfg.fusion_statistic = FusionStatistic::mean;
      else if (statistic == "median")
        cfg.fusion_statistic = FusionStatistic::median;
      else
        throw Error::data("config: fusion.statistic must be mean or median");
    }
    of.finish();
  }
  if (const Json* c = o.child("complete")) {
    StrictObject oc(*c, "complete");
    oc.get("key_views", cfg.complete.key_views);
    oc.get("trajectory_views", cfg.complete.trajectory_views);
    oc.get("spline_multiplier", cfg.complete.spline_multiplier);
    oc.finish();
  }
  o.get("fov_deg", cfg.fov_deg);
  o.finish();

  cfg.model.validate();
  cfg.complete.fusion = cfg.fusion;
  cfg.complete.fusion_statistic = cfg.fusion_statistic;
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  return from_json_text(read_text_file(path));
}

std::string RunConfig::to_json_text() const {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["model"] = model_to_json(model);
  j["schedule"]["steps"] = schedule_steps;
  j["schedule"]["kind"] = schedule_kind;
  j["codec"]["disparity_shift"] = codec.disparity_shift;
  j["codec"]["disparity_scale"] = codec.disparity_scale;
  j["codec"]["moment_scale"] = codec.moment_scale;
  j["train"] = train_to_json(train);
  j["guidance"]["rgb"] = guidance.rgb;
  j["guidance"]["pose"] = guidance.pose;
  j["guidance"]["depth"] = guidance.depth;
  j["guidance"]["steps"] = guidance.steps;
  j["guidance"]["sampler"] = guidance.sampler;
  j["gen"] = gen_to_json(gen);
  j["fusion"]["pix_thresh"] = fusion.pix_thresh;
  j["fusion"]["depth_thresh"] = fusion.depth_thresh;
  j["fusion"]["min_consistent"] = fusion.min_consistent;
  j["fusion"]["statistic"] =
      fusion_statistic == FusionStatistic::mean ? "mean" : "median";
  j["complete"]["key_views"] = complete.key_views;
  j["complete"]["trajectory_views"] = complete.trajectory_views;
  j["complete"]["spline_multiplier"] = complete.spline_multiplier;
  j["fov_deg"] = fov_deg;
  return j.dump(2) + "\n";
}

}  // namespace matrixkit
