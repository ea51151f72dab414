// Benchmarks the OpenMP kernels against their serial reference
// implementations and reports timings plus agreement checks.

#include <chrono>
#include <cstdio>
#include <vector>

#include "matrixkit/backbone.hpp"
#include "matrixkit/evalsuite.hpp"
#include "matrixkit/mvs.hpp"
#include "matrixkit/parallel.hpp"
#include "matrixkit/reference.hpp"
#include "matrixkit/rng.hpp"
#include "matrixkit/synthscene.hpp"

using namespace matrixkit;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class F>
double time_best_of(int reps, F&& fn) {
  double best = 1e18;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    fn();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

void report(const char* name, double serial_ms, double parallel_ms, double diff) {
  std::printf("%-28s serial %8.2f ms   parallel %8.2f ms   speedup %4.2fx   max|diff| %.3g\n",
              name, serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
  std::printf("matrixkit kernel benchmark (threads: %d)\n", effective_threads());

  {  // Raycast renderer: parallel_for over rows vs forced single thread.
    const SceneSpec spec = sample_scene(7, SceneGenConfig{});
    const auto cams = sample_cameras(CameraSamplerConfig{}, 1, 7, 128, 128);
    Image rgb_s, rgb_p;
    DepthMap d_s, d_p;
    set_threads(1);
    const double t_serial =
        time_best_of(3, [&] { render(spec, cams[0], 128, 128, &rgb_s, &d_s); });
    set_threads(0);
    const double t_par =
        time_best_of(3, [&] { render(spec, cams[0], 128, 128, &rgb_p, &d_p); });
    double diff = 0;
    for (std::size_t i = 0; i < rgb_s.data.size(); ++i)
      diff = std::max(diff, std::abs(rgb_s.data[i] - rgb_p.data[i]));
    for (std::size_t i = 0; i < d_s.depth.size(); ++i)
      diff = std::max(diff, std::abs(d_s.depth[i] - d_p.depth[i]));
    report("render 128x128", t_serial, t_par, diff);
  }

  {  // Multi-head attention: naive serial loops vs the production kernel.
    Rng rng(11);
    const int hidden = 192, heads = 4, n = 512;
    Eigen::MatrixXd q(hidden, n), k(hidden, n), v(hidden, n), out_p, out_s;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      q.data()[i] = rng.normal();
      k.data()[i] = rng.normal();
      v.data()[i] = rng.normal();
    }
    std::vector<TokenTag> tags;
    for (int i = 0; i < n; ++i) tags.push_back({i / 64, Modality::rgb, (i / 8) % 8, i % 8});
    const double t_serial = time_best_of(
        3, [&] { reference::mha_forward_serial(q, k, v, heads, tags, tags, out_s); });
    set_threads(0);
    const double t_par = time_best_of(3, [&] {
      kernels::mha_forward(q, k, v, heads, tags, tags, out_p, nullptr);
    });
    report("attention 512 tokens", t_serial, t_par,
           (out_s - out_p).cwiseAbs().maxCoeff());
  }

  {  // Geometric filtering over rendered views.
    DatasetGenConfig gen;
    gen.resolution = 64;
    gen.depth_resolution = 64;
    gen.views_per_scene = 4;
    const Scene scene = generate_scene(3, gen);
    std::vector<DepthMap> depths;
    std::vector<Camera> cams;
    for (const auto& view : scene.views) {
      depths.push_back(view.depth);
      cams.push_back(view.camera);
    }
    std::vector<DepthMap> f_s, f_p;
    set_threads(1);
    const double t_serial = time_best_of(3, [&] { f_s = geometric_filter(depths, cams); });
    set_threads(0);
    const double t_par = time_best_of(3, [&] { f_p = geometric_filter(depths, cams); });
    double diff = 0;
    for (std::size_t v = 0; v < f_s.size(); ++v)
      for (std::size_t i = 0; i < f_s[v].depth.size(); ++i)
        diff = std::max(diff, std::abs(f_s[v].depth[i] - f_p[v].depth[i]));
    report("geometric_filter 4x64x64", t_serial, t_par, diff);
  }

  {  // Nearest-neighbor point-cloud metrics: grid vs O(N^2) brute force.
    Rng rng(13);
    PointCloud a, b;
    for (int i = 0; i < 4000; ++i) {
      a.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
      b.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
    }
    PointCloudMetrics m_grid{}, m_brute{};
    const double t_serial =
        time_best_of(1, [&] { m_brute = reference::pointcloud_metrics_bruteforce(a, b); });
    set_threads(0);
    const double t_par = time_best_of(3, [&] { m_grid = pointcloud_metrics(a, b); });
    const double diff = std::max(std::abs(m_grid.accuracy - m_brute.accuracy),
                                 std::abs(m_grid.completeness - m_brute.completeness));
    report("pointcloud metrics 4k pts", t_serial, t_par, diff);
  }

  {  // Model forward pass, single thread vs all cores.
    ModelConfig cfg;
    Backbone model(cfg);
    model.init_params(1);
    Rng rng(17);
    std::vector<ViewMap> cond, target;
    for (int v = 0; v < 3; ++v) {
      ViewMap m = ViewMap::make(v, Modality::rgb, cfg.rgb_res);
      for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data(i) = rng.normal();
      cond.push_back(std::move(m));
    }
    ViewMap t = ViewMap::make(3, Modality::rgb, cfg.rgb_res);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data(i) = rng.normal();
    target.push_back(std::move(t));

    std::vector<ViewMap> out_s, out_p;
    set_threads(1);
    const double t_serial = time_best_of(3, [&] { out_s = model.forward(cond, target, 10); });
    set_threads(0);
    const double t_par = time_best_of(3, [&] { out_p = model.forward(cond, target, 10); });
    report("backbone forward", t_serial, t_par,
           (out_s[0].data - out_p[0].data).cwiseAbs().maxCoeff());
  }

  return 0;
}
