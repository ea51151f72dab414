#include "matrixkit/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "matrixkit/error.hpp"
#include "matrixkit/geometry.hpp"

namespace matrixkit {

using Eigen::VectorXd;

Schedule Schedule::make(int T, const std::string& kind) {
  if (T < 2) throw Error::data("schedule: T must be >= 2");
  Schedule s;
  s.T = T;
  s.alpha.resize(T);
  s.sigma.resize(T);
  if (kind == "vp_cosine") {
    for (int t = 0; t < T; ++t) {
      const double u = static_cast<double>(t) / (T - 1);
      s.alpha(t) = std::cos(0.5 * 3.14159265358979323846 * u);
      s.sigma(t) = std::sin(0.5 * 3.14159265358979323846 * u);
    }
  } else if (kind == "vp_linear") {
    for (int t = 0; t < T; ++t) {
      const double u = static_cast<double>(t) / (T - 1);
      s.alpha(t) = std::sqrt(1.0 - u);
      s.sigma(t) = std::sqrt(u);
    }
  } else {
    throw Error::data("schedule: unknown kind '" + kind + "'");
  }
  return s;
}

VectorXd corrupt(const VectorXd& x0, int t, const VectorXd& noise,
                 const Schedule& s) {
  if (x0.size() != noise.size()) throw Error::data("corrupt: shape mismatch");
  if (t < 0 || t >= s.T) throw Error::data("corrupt: timestep out of range");
  return s.alpha(t) * x0 + s.sigma(t) * noise;
}

VectorXd v_target(const VectorXd& x0, int t, const VectorXd& noise,
                  const Schedule& s) {
  if (x0.size() != noise.size()) throw Error::data("v_target: shape mismatch");
  if (t < 0 || t >= s.T) throw Error::data("v_target: timestep out of range");
  return s.alpha(t) * noise - s.sigma(t) * x0;
}

const char* task_name(Task t) {
  switch (t) {
    case Task::nvs: return "nvs";
    case Task::pose: return "pose";
    case Task::depth: return "depth";
    case Task::random: return "random";
  }
  return "random";
}

int MaskPlan::target_count() const {
  int n = 0;
  for (const auto& view : flags)
    for (const auto f : view) n += f == PlanFlag::target;
  return n;
}

MaskPlan sample_mask_plan(Rng& rng, int n_views,
                          std::array<bool, kNumModalities> present,
                          const CurriculumConfig& curriculum) {
  if (n_views < 2)
    throw Error::data("sample_mask_plan: the curriculum needs >= 2 views");
  if (!present[static_cast<int>(Modality::rgb)])
    throw Error::data("sample_mask_plan: RGB must be present");

  double r = rng.uniform();
  Task task = Task::random;
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    acc += curriculum.task_ratios[k];
    if (r < acc) {
      task = static_cast<Task>(k);
      break;
    }
  }

  // Tasks whose modalities the dataset lacks fall back to random over the
  // available ones.
  const bool has_pose = present[static_cast<int>(Modality::pose)];
  const bool has_depth = present[static_cast<int>(Modality::depth)];
  if ((task == Task::nvs || task == Task::pose) && !has_pose) task = Task::random;
  if (task == Task::depth && !(has_depth && has_pose)) task = Task::random;

  MaskPlan plan;
  plan.task = task;
  plan.flags.assign(n_views, {PlanFlag::absent, PlanFlag::absent, PlanFlag::absent});
  auto set = [&](int view, Modality m, PlanFlag f) {
    plan.flags[view][static_cast<int>(m)] = f;
  };

  switch (task) {
    case Task::nvs: {
      // Poses condition every view; RGB conditions a random nonempty strict
      // subset and is generated on the rest.
      const int n_cond =
          1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_views - 1)));
      std::vector<int> order(n_views);
      for (int i = 0; i < n_views; ++i) order[i] = i;
      for (int i = n_views - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
      for (int v = 0; v < n_views; ++v) set(v, Modality::pose, PlanFlag::condition);
      for (int i = 0; i < n_views; ++i)
        set(order[i], Modality::rgb,
            i < n_cond ? PlanFlag::condition : PlanFlag::target);
      break;
    }
    case Task::pose: {
      for (int v = 0; v < n_views; ++v) set(v, Modality::rgb, PlanFlag::condition);
      set(0, Modality::pose, PlanFlag::condition);  // identity reference camera
      for (int v = 1; v < n_views; ++v) set(v, Modality::pose, PlanFlag::target);
      break;
    }
    case Task::depth: {
      for (int v = 0; v < n_views; ++v) {
        set(v, Modality::rgb, PlanFlag::condition);
        set(v, Modality::pose, PlanFlag::condition);
        set(v, Modality::depth, PlanFlag::target);
      }
      break;
    }
    case Task::random: {
      int targets = 0;
      do {
        targets = 0;
        for (int v = 0; v < n_views; ++v) {
          for (int m = 0; m < kNumModalities; ++m) {
            if (!present[m]) continue;
            const bool is_target = rng.bernoulli(0.5);
            plan.flags[v][m] = is_target ? PlanFlag::target : PlanFlag::condition;
            targets += is_target;
          }
        }
      } while (targets == 0);
      break;
    }
  }

  plan.cond_dropped = rng.bernoulli(curriculum.cond_dropout);
  return plan;
}

// ---- Codecs ----

ViewMap encode_rgb_map(const Image& img, int view_id) {
  if (img.channels != 3) throw Error::data("encode_rgb_map: expected 3 channels");
  ViewMap v;
  v.view_id = view_id;
  v.modality = Modality::rgb;
  v.data.resize(static_cast<Eigen::Index>(img.data.size()));
  for (std::size_t i = 0; i < img.data.size(); ++i)
    v.data(static_cast<Eigen::Index>(i)) = 2.0 * img.data[i] - 1.0;
  return v;
}

Image decode_rgb_map(const ViewMap& m, int res) {
  Image img(res, res, 3);
  if (m.data.size() != static_cast<Eigen::Index>(img.data.size()))
    throw Error::data("decode_rgb_map: size mismatch");
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = std::clamp(0.5 * (m.data(static_cast<Eigen::Index>(i)) + 1.0), 0.0, 1.0);
  return img;
}

ViewMap encode_raymap(const RayMap& rm, int view_id, const CodecConfig& codec) {
  ViewMap v;
  v.view_id = view_id;
  v.modality = Modality::pose;
  v.data.resize(static_cast<Eigen::Index>(rm.directions.size()) * 6);
  for (std::size_t i = 0; i < rm.directions.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      v.data(static_cast<Eigen::Index>(i) * 6 + k) = rm.directions[i](k);
      v.data(static_cast<Eigen::Index>(i) * 6 + 3 + k) =
          rm.moments[i](k) * codec.moment_scale;
    }
  }
  return v;
}

RayMap decode_raymap(const ViewMap& m, int res, const CodecConfig& codec) {
  RayMap rm(res, res);
  if (m.data.size() != static_cast<Eigen::Index>(rm.directions.size()) * 6)
    throw Error::data("decode_raymap: size mismatch");
  for (std::size_t i = 0; i < rm.directions.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      rm.directions[i](k) = m.data(static_cast<Eigen::Index>(i) * 6 + k);
      rm.moments[i](k) =
          m.data(static_cast<Eigen::Index>(i) * 6 + 3 + k) / codec.moment_scale;
    }
  }
  return rm;
}

ViewMap encode_depth_map(const DepthMap& d, int view_id, const CodecConfig& codec) {
  const DisparityMap disp =
      encode_disparity(d, codec.disparity_shift, codec.disparity_scale);
  ViewMap v;
  v.view_id = view_id;
  v.modality = Modality::depth;
  v.data.resize(static_cast<Eigen::Index>(d.depth.size()) * 2);
  for (std::size_t i = 0; i < d.depth.size(); ++i) {
    v.data(static_cast<Eigen::Index>(i) * 2) = disp.disparity[i];
    v.data(static_cast<Eigen::Index>(i) * 2 + 1) = disp.valid[i] ? 1.0 : -1.0;
  }
  return v;
}

DepthMap decode_depth_map(const ViewMap& m, int res, const CodecConfig& codec) {
  DisparityMap disp;
  disp.width = res;
  disp.height = res;
  disp.shift = codec.disparity_shift;
  disp.scale = codec.disparity_scale;
  disp.disparity.assign(static_cast<std::size_t>(res) * res, 0.0);
  disp.valid.assign(static_cast<std::size_t>(res) * res, 0);
  if (m.data.size() != static_cast<Eigen::Index>(disp.disparity.size()) * 2)
    throw Error::data("decode_depth_map: size mismatch");
  for (std::size_t i = 0; i < disp.disparity.size(); ++i) {
    disp.disparity[i] = m.data(static_cast<Eigen::Index>(i) * 2);
    const double mask01 = 0.5 * (m.data(static_cast<Eigen::Index>(i) * 2 + 1) + 1.0);
    disp.valid[i] = mask01 > 0.5 ? 1 : 0;
  }
  return decode_disparity(disp);
}

VectorXd depth_loss_weight(const DepthMap& d) {
  VectorXd w(static_cast<Eigen::Index>(d.depth.size()) * 2);
  for (std::size_t i = 0; i < d.depth.size(); ++i) {
    w(static_cast<Eigen::Index>(i) * 2) = d.valid[i] ? 1.0 : 0.0;
    w(static_cast<Eigen::Index>(i) * 2 + 1) = 1.0;  // mask channel supervised
  }
  return w;
}

// ---- Batch assembly ----

Batch assemble_batch(const ModelConfig& cfg, const std::vector<ViewBundle>& views,
                     const MaskPlan& plan, const Schedule& schedule, int t,
                     const CodecConfig& codec, Rng& rng) {
  if (views.size() != plan.flags.size())
    throw Error::data("assemble_batch: plan/view count mismatch");
  if (t < 0 || t >= schedule.T)
    throw Error::data("assemble_batch: timestep out of range");

  std::vector<Camera> cams;
  cams.reserve(views.size());
  for (const auto& v : views) cams.push_back(v.camera);
  cams = normalize_cameras(cams);

  Batch batch;
  batch.t = t;
  for (std::size_t v = 0; v < views.size(); ++v) {
    for (int mi = 0; mi < kNumModalities; ++mi) {
      const Modality m = static_cast<Modality>(mi);
      const PlanFlag flag = plan.flags[v][mi];
      if (flag == PlanFlag::absent) continue;

      ViewMap encoded;
      VectorXd weight;
      switch (m) {
        case Modality::rgb:
          if (views[v].rgb.width != cfg.rgb_res || views[v].rgb.height != cfg.rgb_res)
            throw Error::data("assemble_batch: RGB resolution does not match the model");
          encoded = encode_rgb_map(views[v].rgb, static_cast<int>(v));
          weight = VectorXd::Ones(encoded.data.size());
          break;
        case Modality::pose:
          encoded = encode_raymap(camera_to_raymap(cams[v], cfg.ray_res, cfg.ray_res),
                                  static_cast<int>(v), codec);
          weight = VectorXd::Ones(encoded.data.size());
          break;
        case Modality::depth:
          if (views[v].depth.width != cfg.depth_res ||
              views[v].depth.height != cfg.depth_res)
            throw Error::data("assemble_batch: depth resolution does not match the model");
          encoded = encode_depth_map(views[v].depth, static_cast<int>(v), codec);
          weight = depth_loss_weight(views[v].depth);
          break;
      }

      if (flag == PlanFlag::condition) {
        if (!plan.cond_dropped) batch.condition.push_back(std::move(encoded));
      } else {
        VectorXd noise(encoded.data.size());
        for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = rng.normal();
        ViewMap noisy = encoded;
        noisy.data = corrupt(encoded.data, t, noise, schedule);
        ViewMap v_map = encoded;
        v_map.data = v_target(encoded.data, t, noise, schedule);
        batch.noisy_target.push_back(std::move(noisy));
        batch.v_target.push_back(std::move(v_map));
        batch.loss_weight.push_back(std::move(weight));
      }
    }
  }
  if (batch.noisy_target.empty())
    throw Error::data("assemble_batch: plan produced no targets");
  return batch;
}

// ---- Training ----

namespace {

std::array<bool, kNumModalities> scene_modalities(const Scene& scene) {
  bool depth = !scene.views.empty();
  for (const auto& v : scene.views) depth = depth && v.has_depth;
  return {true, true, depth};
}

}  // namespace

TrainResult train(Backbone& model, const std::vector<Scene>& dataset,
                  const Schedule& schedule, const TrainConfig& cfg,
                  const CodecConfig& codec,
                  const std::function<void(int step)>& on_checkpoint) {
  if (dataset.empty()) throw Error::data("train: empty dataset");
  for (const auto& scene : dataset)
    if (scene.views.size() < 2)
      throw Error::data("train: every scene needs >= 2 views");

  // AdamW state.
  auto& tensors = model.params().tensors();
  std::vector<Eigen::MatrixXd> m1, m2;
  m1.reserve(tensors.size());
  m2.reserve(tensors.size());
  for (const auto& t : tensors) {
    m1.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
    m2.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
  }

  TrainResult result;
  result.trace.reserve(static_cast<std::size_t>(cfg.steps) * cfg.batch_size);

  for (int step = 0; step < cfg.steps; ++step) {
    model.params().zero_grad();
    for (int b = 0; b < cfg.batch_size; ++b) {
      Rng rng = Rng::stream(cfg.seed, 0x57E9, static_cast<std::uint64_t>(step),
                            static_cast<std::uint64_t>(b));
      const Scene& scene =
          dataset[rng.uniform_int(static_cast<std::uint64_t>(dataset.size()))];

      const int n_views = std::min({cfg.n_views, static_cast<int>(scene.views.size()),
                                    model.config().max_views});
      std::vector<int> order(scene.views.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      if (cfg.shuffle_views) {
        for (std::size_t i = order.size() - 1; i > 0; --i)
          std::swap(order[i], order[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
      }
      std::vector<ViewBundle> views;
      views.reserve(n_views);
      for (int i = 0; i < n_views; ++i) views.push_back(scene.views[order[i]]);

      const MaskPlan plan =
          sample_mask_plan(rng, n_views, scene_modalities(scene), cfg.curriculum);
      // t = 0 has sigma = 0, where the v-target degenerates to the raw noise
      // and carries no signal; training samples t >= 1.
      const int t = 1 + static_cast<int>(rng.uniform_int(
                            static_cast<std::uint64_t>(schedule.T - 1)));
      const Batch batch = assemble_batch(model.config(), views, plan, schedule, t,
                                          codec, rng);
      const double item_loss = model.loss(batch, true);
      if (!std::isfinite(item_loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at step " << step << " (task "
            << task_name(plan.task) << ", t " << t << ")";
        throw Error::numeric(msg.str());
      }
      result.trace.push_back({step, plan.task, item_loss});
    }
    model.params().scale_grads(1.0 / cfg.batch_size);

    const double warm =
        cfg.warmup_steps > 0
            ? std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps)
            : 1.0;
    const double lr = cfg.lr * warm;
    const double bc1 = 1.0 - std::pow(cfg.beta1, step + 1);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step + 1);
    constexpr double kAdamEps = 1e-8;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      Tensor& t = tensors[i];
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * t.grad;
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * t.grad.cwiseProduct(t.grad);
      const Eigen::MatrixXd mhat = m1[i] / bc1;
      const Eigen::MatrixXd vhat = m2[i] / bc2;
      t.value -= lr * (mhat.array() / (vhat.array().sqrt() + kAdamEps) +
                       cfg.weight_decay * t.value.array())
                     .matrix();
    }
#ifndef NDEBUG
    if (!model.params().all_finite())
      throw Error::numeric("train: non-finite parameters after step " +
                           std::to_string(step));
#endif
    if (on_checkpoint && cfg.checkpoint_every > 0 &&
        (step + 1) % cfg.checkpoint_every == 0)
      on_checkpoint(step + 1);
  }
  return result;
}

// ---- Sampling ----

std::vector<ViewMap> sample(const Backbone& model, const SampleRequest& request,
                            const Schedule& schedule, const GuidanceConfig& guide,
                            Rng& rng) {
  if (request.targets.empty())
    throw Error::data("sample: nothing to generate (no targets)");
  if (guide.sampler != "ddim")
    throw Error::data("sample: unknown sampler '" + guide.sampler + "'");
  const ModelConfig& cfg = model.config();

  // Strided descending sub-schedule including both endpoints.
  const int steps = std::max(1, std::min(guide.steps, schedule.T - 1));
  std::vector<int> ts;
  ts.reserve(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    const int t = static_cast<int>(std::lround(
        (schedule.T - 1) * (1.0 - static_cast<double>(i) / steps)));
    if (ts.empty() || ts.back() != t) ts.push_back(t);
  }

  // Initialize targets as unit Gaussian noise.
  std::vector<ViewMap> x;
  x.reserve(request.targets.size());
  for (const auto& [view, modality] : request.targets) {
    ViewMap m = ViewMap::make(view, modality, cfg.resolution(modality));
    for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data(i) = rng.normal();
    x.push_back(std::move(m));
  }

  const bool guided = guide.any_guided();
  const std::vector<ViewMap> no_condition;
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const int t = ts[k];
    const int t_next = ts[k + 1];
    const std::vector<ViewMap> v_cond = model.forward(request.condition, x, t);
    std::vector<ViewMap> v_hat = v_cond;
    if (guided) {
      const std::vector<ViewMap> v_uncond = model.forward(no_condition, x, t);
      for (std::size_t i = 0; i < v_hat.size(); ++i) {
        const double s = guide.scale(x[i].modality);
        // s == 1 must reproduce the conditional branch bit-exactly.
        if (s != 1.0)
          v_hat[i].data = v_uncond[i].data + s * (v_cond[i].data - v_uncond[i].data);
      }
    }
    const double at = schedule.alpha(t), st = schedule.sigma(t);
    const double an = schedule.alpha(t_next), sn = schedule.sigma(t_next);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const VectorXd x0_hat = at * x[i].data - st * v_hat[i].data;
      const VectorXd eps_hat = st * x[i].data + at * v_hat[i].data;
      x[i].data = an * x0_hat + sn * eps_hat;
    }
  }
  return x;
}

}  // namespace matrixkit
