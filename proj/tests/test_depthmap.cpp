#include <doctest.h>

#include <cmath>

#include "matrixkit/error.hpp"
#include "matrixkit/mvs.hpp"
#include "matrixkit/rng.hpp"
#include "matrixkit/synthscene.hpp"
#include "test_helpers.hpp"

using namespace matrixkit;
using testing::random_camera;

namespace {

DepthMap random_depth(Rng& rng, int w, int h, double valid_prob = 0.8) {
  DepthMap d(w, h);
  for (std::size_t i = 0; i < d.depth.size(); ++i) {
    if (rng.uniform() < valid_prob) {
      d.depth[i] = rng.uniform(0.2, 5.0);
      d.valid[i] = 1;
    }
  }
  return d;
}

}  // namespace

TEST_CASE("disparity codec: fixed points") {
  DepthMap d(1, 1);
  d.depth[0] = 1.0;
  d.valid[0] = 1;
  CHECK(encode_disparity(d, 0.0, 1.0).disparity[0] == doctest::Approx(1.0));
  d.depth[0] = 2.0;
  CHECK(encode_disparity(d, 0.5, 0.25).disparity[0] == doctest::Approx(0.0));
}

TEST_CASE("disparity codec: round trip on random fields") {
  Rng rng(101);
  for (int it = 0; it < 20; ++it) {
    const DepthMap d = random_depth(rng, 16, 16);
    const double shift = rng.uniform(-0.5, 2.0);
    const double scale = rng.uniform(0.2, 3.0);
    const DepthMap back = decode_disparity(encode_disparity(d, shift, scale));
    for (std::size_t i = 0; i < d.depth.size(); ++i) {
      CHECK(back.valid[i] == d.valid[i]);
      if (d.valid[i])
        CHECK(std::abs(back.depth[i] - d.depth[i]) <= 1e-7 * d.depth[i]);
      else
        CHECK(back.depth[i] == 0.0);
    }
  }
}

TEST_CASE("disparity codec: out-of-range pixels demoted to invalid") {
  DisparityMap dm;
  dm.width = 2;
  dm.height = 1;
  dm.shift = 0.0;
  dm.scale = 1.0;
  dm.disparity = {1.0, -0.1};
  dm.valid = {1, 1};
  const DepthMap d = decode_disparity(dm);
  CHECK(d.depth[0] == doctest::Approx(1.0));
  CHECK(d.valid[0] == 1);
  CHECK(d.valid[1] == 0);  // negative depth impossible
  CHECK(d.depth[1] == 0.0);
}

TEST_CASE("disparity codec: rejects zero scale") {
  DepthMap d(2, 2);
  CHECK_THROWS_AS(encode_disparity(d, 0.0, 0.0), Error);
}

TEST_CASE("backproject: principal pixel of the identity camera") {
  Camera cam;
  cam.focal = focal_from_fov_deg(50.0, 33);
  cam.principal_point = Vec2(16.5, 16.5);
  cam.width = 33;
  cam.height = 33;
  DepthMap d(33, 33);
  d.at(16, 16) = 0.7;
  d.valid[d.idx(16, 16)] = 1;
  const PointCloud pc = backproject(d, cam);
  REQUIRE(pc.size() == 1);
  // Camera center (0,0,-1) plus 0.7 along +z.
  CHECK((pc.points[0] - Vec3(0, 0, -0.3)).norm() < 1e-9);
}

TEST_CASE("backproject: empty depth map gives empty cloud") {
  Camera cam;
  cam.focal = 30;
  cam.principal_point = Vec2(16, 16);
  cam.width = 32;
  cam.height = 32;
  const PointCloud pc = backproject(DepthMap(32, 32), cam);
  CHECK(pc.size() == 0);
}

TEST_CASE("backproject: non-uniform grid scale is a shape error") {
  Camera cam;
  cam.focal = 30;
  cam.principal_point = Vec2(16, 12);
  cam.width = 32;
  cam.height = 24;
  CHECK_THROWS_AS(backproject(DepthMap(16, 16), cam), Error);
}

TEST_CASE("backproject/reproject round trip") {
  Rng rng(103);
  for (int it = 0; it < 10; ++it) {
    const Camera cam = random_camera(rng, 32, 32);
    DepthMap d(16, 16);  // half the camera raster: scale 2 per depth pixel
    for (std::size_t i = 0; i < d.depth.size(); ++i) {
      d.depth[i] = rng.uniform(0.5, 3.0);
      d.valid[i] = 1;
    }
    const auto reproj = reproject(d, cam, cam);
    for (int y = 0; y < d.height; ++y) {
      for (int x = 0; x < d.width; ++x) {
        const auto& r = reproj[d.idx(y, x)];
        CHECK(r.in_view);
        CHECK(std::abs(r.u - (x + 0.5) * 2.0) < 1e-9);
        CHECK(std::abs(r.v - (y + 0.5) * 2.0) < 1e-9);
        CHECK(std::abs(r.depth - d.at(y, x)) < 1e-9);
      }
    }
  }
}

TEST_CASE("reproject: plane homography oracle") {
  // Two cameras looking at the plane z = 1; the reprojection of a point on
  // the plane must match the analytic projection of its world position.
  const double f = focal_from_fov_deg(50.0, 32);
  const Camera ref = Camera::look_at(Vec3(0, 0, -1), Vec3(0, 0, 1), f, 32, 32);
  const Camera src = Camera::look_at(Vec3(0.6, 0.2, -0.9), Vec3(0, 0, 1), f, 32, 32);

  DepthMap d(32, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      // Depth of the plane z=1 along this pixel's ray.
      const Vec3 dir = ref.ray_direction(x + 0.5, y + 0.5);
      const Vec3 o = ref.center();
      const double t = (1.0 - o.z()) / dir.z();
      const Vec3 p = o + t * dir;
      double depth = 0.0;
      ref.project(p, &depth);
      d.at(y, x) = depth;
      d.valid[d.idx(y, x)] = 1;
    }
  }
  const auto reproj = reproject(d, ref, src);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const Vec3 dir = ref.ray_direction(x + 0.5, y + 0.5);
      const Vec3 o = ref.center();
      const double t = (1.0 - o.z()) / dir.z();
      const Vec3 p = o + t * dir;  // independent closed-form plane point
      double sd = 0.0;
      const Vec2 uv = src.project(p, &sd);
      const auto& r = reproj[d.idx(y, x)];
      CHECK(std::abs(r.u - uv.x()) < 1e-9);
      CHECK(std::abs(r.v - uv.y()) < 1e-9);
      CHECK(std::abs(r.depth - sd) < 1e-9);
    }
  }
}

TEST_CASE("reproject: point behind the source camera is out of view") {
  const double f = focal_from_fov_deg(50.0, 32);
  const Camera ref = Camera::look_at(Vec3(0, 0, -2), Vec3(0, 0, 0), f, 32, 32);
  const Camera src = Camera::look_at(Vec3(0, 0, 2), Vec3(0, 0, 4), f, 32, 32);
  DepthMap d(32, 32);
  d.at(16, 16) = 1.0;  // lands near the origin, behind src
  d.valid[d.idx(16, 16)] = 1;
  const auto reproj = reproject(d, ref, src);
  CHECK_FALSE(reproj[d.idx(16, 16)].in_view);
}

namespace {

// Fronto-parallel plane rendered from laterally shifted cameras: depth is
// constant, every in-view pixel round-trips exactly, so the behavior of the
// filter and fusion is fully predictable.
struct PlaneRig {
  SceneSpec spec;
  std::vector<Camera> cams;
  std::vector<DepthMap> depths;
  std::vector<Image> rgbs;
};

PlaneRig make_plane_rig(int res, int n_views) {
  PlaneRig rig;
  Primitive plane;
  plane.kind = PrimitiveKind::plane;
  plane.center = Vec3(0, 0, 0.8);
  plane.rotation = Mat3::Identity();
  plane.size = Vec3(50, 50, 0);
  plane.albedo = Vec3(0.7, 0.6, 0.5);
  rig.spec.primitives.push_back(plane);
  rig.spec.lights.push_back({Vec3(0, 0, 1).normalized(), Vec3(0.6, 0.6, 0.6)});
  const double f = focal_from_fov_deg(50.0, res);
  for (int i = 0; i < n_views; ++i) {
    const Vec3 c(0.08 * i, 0.02 * i, -1.0);
    rig.cams.push_back(Camera::look_at(c, c + Vec3(0, 0, 1), f, res, res));
  }
  rig.depths.resize(n_views);
  rig.rgbs.resize(n_views);
  for (int i = 0; i < n_views; ++i)
    render(rig.spec, rig.cams[i], res, res, &rig.rgbs[i], &rig.depths[i]);
  return rig;
}

}  // namespace

TEST_CASE("geometric_filter: exact consistent views keep all co-visible pixels") {
  PlaneRig rig = make_plane_rig(24, 3);
  const FusionOptions opts;
  const auto filtered = geometric_filter(rig.depths, rig.cams, opts);
  // Expected survivors: pixels whose projection lands inside at least
  // min_consistent source views (out-of-view pixels are the only casualties).
  for (int v = 0; v < 3; ++v) {
    std::vector<int> in_view_count(rig.depths[v].depth.size(), 0);
    for (int s = 0; s < 3; ++s) {
      if (s == v) continue;
      const auto reproj = reproject(rig.depths[v], rig.cams[v], rig.cams[s]);
      for (std::size_t i = 0; i < reproj.size(); ++i)
        in_view_count[i] += reproj[i].in_view ? 1 : 0;
    }
    for (std::size_t i = 0; i < filtered[v].valid.size(); ++i) {
      const bool expect = rig.depths[v].valid[i] &&
                          in_view_count[i] >= opts.min_consistent;
      CHECK(static_cast<bool>(filtered[v].valid[i]) == expect);
      if (expect) CHECK(filtered[v].depth[i] == rig.depths[v].depth[i]);
    }
  }
}

TEST_CASE("geometric_filter: injected outliers are removed") {
  PlaneRig rig = make_plane_rig(32, 3);
  Rng rng(107);
  std::vector<std::size_t> injected;
  DepthMap& v0 = rig.depths[0];
  for (std::size_t i = 0; i < v0.depth.size(); ++i) {
    if (v0.valid[i] && rng.uniform() < 0.05) {
      v0.depth[i] *= 2.0;
      injected.push_back(i);
    }
  }
  REQUIRE(injected.size() > 10);
  const auto filtered = geometric_filter(rig.depths, rig.cams);
  std::size_t removed = 0;
  for (auto i : injected)
    if (!filtered[0].valid[i]) ++removed;
  const double rate = static_cast<double>(removed) / injected.size();
  CHECK(rate >= 0.95);
}

TEST_CASE("geometric_filter: validity output is a subset of the input") {
  PlaneRig rig = make_plane_rig(24, 2);
  // Punch random holes so subset logic is exercised.
  Rng rng(109);
  for (auto& d : rig.depths)
    for (std::size_t i = 0; i < d.valid.size(); ++i)
      if (rng.uniform() < 0.3) {
        d.valid[i] = 0;
        d.depth[i] = 0;
      }
  const auto filtered = geometric_filter(rig.depths, rig.cams);
  for (int v = 0; v < 2; ++v)
    for (std::size_t i = 0; i < filtered[v].valid.size(); ++i)
      if (filtered[v].valid[i]) CHECK(rig.depths[v].valid[i]);
}

TEST_CASE("geometric_filter: single view errors out") {
  PlaneRig rig = make_plane_rig(16, 1);
  CHECK_THROWS_AS(geometric_filter(rig.depths, rig.cams), Error);
}

TEST_CASE("geometric_fusion: agreement is a fixed point") {
  PlaneRig rig = make_plane_rig(24, 3);
  for (auto statistic : {FusionStatistic::mean, FusionStatistic::median}) {
    const auto fused = geometric_fusion(rig.depths, rig.cams, statistic);
    for (int v = 0; v < 3; ++v)
      for (std::size_t i = 0; i < fused[v].depth.size(); ++i)
        if (rig.depths[v].valid[i])
          CHECK(std::abs(fused[v].depth[i] - rig.depths[v].depth[i]) <
                1e-9 * rig.depths[v].depth[i]);
  }
}

TEST_CASE("geometric_fusion: median shrugs off one perturbed view") {
  PlaneRig rig = make_plane_rig(24, 5);
  const std::size_t px = rig.depths[1].idx(12, 12);
  REQUIRE(rig.depths[1].valid[px]);
  const double eps = 1e-4 * rig.depths[1].depth[px];
  rig.depths[1].depth[px] += eps;
  const auto fused =
      geometric_fusion(rig.depths, rig.cams, FusionStatistic::median);
  // The perturbed view's pixel gathers four clean values; the median lands
  // on a clean one.
  CHECK(std::abs(fused[1].depth[px] - (rig.depths[1].depth[px] - eps)) < eps);
}

TEST_CASE("geometric_fusion: mean statistic reduces RMSE under noise") {
  PlaneRig rig = make_plane_rig(24, 5);
  const auto clean = rig.depths;
  Rng rng(113);
  for (auto& d : rig.depths)
    for (std::size_t i = 0; i < d.depth.size(); ++i)
      if (d.valid[i]) d.depth[i] += 0.002 * rng.normal();
  const auto fused = geometric_fusion(rig.depths, rig.cams, FusionStatistic::mean,
                                      {.pix_thresh = 2.0, .depth_thresh = 0.05});
  double rmse_noisy = 0, rmse_fused = 0;
  std::size_t n = 0;
  for (int v = 0; v < 5; ++v) {
    for (std::size_t i = 0; i < clean[v].depth.size(); ++i) {
      if (!clean[v].valid[i]) continue;
      rmse_noisy += std::pow(rig.depths[v].depth[i] - clean[v].depth[i], 2);
      rmse_fused += std::pow(fused[v].depth[i] - clean[v].depth[i], 2);
      ++n;
    }
  }
  CHECK(rmse_fused < rmse_noisy);
}

TEST_CASE("masked pixels never reach fused values or clouds") {
  PlaneRig rig = make_plane_rig(24, 3);
  // Corrupt the depth under dead mask bits; nothing downstream may change.
  auto poisoned = rig.depths;
  Rng rng(127);
  for (auto& d : poisoned)
    for (std::size_t i = 0; i < d.valid.size(); ++i)
      if (rng.uniform() < 0.2) {
        d.valid[i] = 0;
        d.depth[i] = 0;
      }
  auto spiked = poisoned;
  for (auto& d : spiked)
    for (std::size_t i = 0; i < d.valid.size(); ++i)
      if (!d.valid[i]) d.depth[i] = 1e6;

  const auto fused_a =
      geometric_fusion(poisoned, rig.cams, FusionStatistic::mean);
  const auto fused_b = geometric_fusion(spiked, rig.cams, FusionStatistic::mean);
  for (int v = 0; v < 3; ++v)
    for (std::size_t i = 0; i < fused_a[v].depth.size(); ++i)
      if (poisoned[v].valid[i])
        CHECK(fused_a[v].depth[i] == fused_b[v].depth[i]);

  const PointCloud pc_a = backproject(poisoned[0], rig.cams[0]);
  PointCloud pc_b = backproject(spiked[0], rig.cams[0]);
  REQUIRE(pc_a.size() == pc_b.size());
  for (std::size_t i = 0; i < pc_a.size(); ++i)
    CHECK((pc_a.points[i] - pc_b.points[i]).norm() == 0.0);
}
