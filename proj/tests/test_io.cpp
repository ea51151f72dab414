#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "matrixkit/error.hpp"
#include "matrixkit/io.hpp"
#include "matrixkit/rng.hpp"
#include "test_helpers.hpp"

using namespace matrixkit;

TEST_CASE("pfm: write/read round trip is float32-exact") {
  const std::string dir = testing::scratch_dir("pfm");
  Rng rng(211);
  DepthMap d(13, 7);
  for (std::size_t i = 0; i < d.depth.size(); ++i) {
    d.depth[i] = rng.uniform(0.01, 10.0);
    d.valid[i] = 1;
  }
  const std::string path = dir + "/depth.pfm";
  write_pfm(path, d);
  const DepthMap back = read_pfm(path);
  REQUIRE(back.width == d.width);
  REQUIRE(back.height == d.height);
  for (std::size_t i = 0; i < d.depth.size(); ++i)
    CHECK(back.depth[i] == static_cast<double>(static_cast<float>(d.depth[i])));
  std::filesystem::remove_all(dir);
}

TEST_CASE("pfm: truncated file names the path") {
  const std::string dir = testing::scratch_dir("pfm_trunc");
  const std::string path = dir + "/short.pfm";
  write_text_file(path, "Pf\n8 8\n-1.0\n few bytes");
  try {
    read_pfm(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("short.pfm") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("pgm mask round trip") {
  const std::string dir = testing::scratch_dir("pgm");
  Rng rng(223);
  DepthMap d(9, 5);
  for (std::size_t i = 0; i < d.depth.size(); ++i) {
    if (rng.uniform() < 0.5) {
      d.depth[i] = 1.0;
      d.valid[i] = 1;
    }
  }
  write_pgm_mask(dir + "/m.pgm", d);
  DepthMap loaded(9, 5);
  for (std::size_t i = 0; i < loaded.depth.size(); ++i) loaded.depth[i] = 1.0;
  read_pgm_mask(dir + "/m.pgm", loaded);
  for (std::size_t i = 0; i < d.valid.size(); ++i) {
    CHECK(loaded.valid[i] == d.valid[i]);
    if (!d.valid[i]) CHECK(loaded.depth[i] == 0.0);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("png: 8-bit round trip within quantization") {
  const std::string dir = testing::scratch_dir("png");
  Rng rng(227);
  Image img(17, 11, 3);
  for (auto& v : img.data) v = rng.uniform();
  write_png(dir + "/img.png", img);
  const Image back = read_png(dir + "/img.png");
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
  // Quantized values re-encode exactly.
  write_png(dir + "/img2.png", back);
  const Image again = read_png(dir + "/img2.png");
  for (std::size_t i = 0; i < back.data.size(); ++i)
    CHECK(again.data[i] == back.data[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("png: corrupt input rejected") {
  const std::string dir = testing::scratch_dir("png_bad");
  write_text_file(dir + "/bad.png", "not a png at all");
  CHECK_THROWS_AS(read_png(dir + "/bad.png"), Error);
  CHECK_THROWS_AS(read_png(dir + "/missing.png"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("ply: round trip preserves count and float32 coordinates exactly") {
  const std::string dir = testing::scratch_dir("ply");
  Rng rng(229);
  PointCloud pc;
  for (int i = 0; i < 257; ++i) {
    pc.points.emplace_back(rng.normal(), rng.normal(), rng.normal());
    pc.colors.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
  }
  write_ply(dir + "/a.ply", pc);
  const PointCloud back = read_ply(dir + "/a.ply");
  REQUIRE(back.size() == pc.size());
  REQUIRE(back.has_colors());
  // A second write of the loaded cloud must be byte-identical.
  write_ply(dir + "/b.ply", back);
  CHECK(read_text_file(dir + "/a.ply") == read_text_file(dir + "/b.ply"));
  for (std::size_t i = 0; i < pc.size(); ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(back.points[i](k) ==
            static_cast<double>(static_cast<float>(pc.points[i](k))));
  std::filesystem::remove_all(dir);
}

TEST_CASE("ply: colorless clouds") {
  const std::string dir = testing::scratch_dir("ply_plain");
  PointCloud pc;
  pc.points.emplace_back(1, 2, 3);
  write_ply(dir + "/p.ply", pc);
  const PointCloud back = read_ply(dir + "/p.ply");
  CHECK(back.size() == 1);
  CHECK_FALSE(back.has_colors());
  std::filesystem::remove_all(dir);
}
