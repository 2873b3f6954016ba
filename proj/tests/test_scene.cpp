#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "spf/scene.hpp"

using namespace spf;
using namespace spf::scene;

namespace {

SceneConfig small_cfg() {
  SceneConfig cfg;
  cfg.height = 24;
  cfg.width = 32;
  cfg.n_planes = 2;
  cfg.n_boxes = 1;
  cfg.landmark_density = 16.0 / (24 * 32);
  cfg.n_fixed = 24;
  return cfg;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::uint64_t h = 1469598103934665603ull;
  char c;
  while (f.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST_CASE("single fronto-parallel plane renders constant depth") {
  Surface plane;
  plane.kind = Surface::Kind::Background;
  plane.normal = {0, 0, 1};
  plane.offset = 2.0;
  auto res = render({plane}, 8, 12, 10.0);
  REQUIRE(res.complete);
  for (std::int64_t p = 0; p < res.depth.size(); ++p) CHECK(res.depth.at(p) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("slanted plane matches analytic ray intersection and is monotone") {
  Surface plane;
  plane.kind = Surface::Kind::Background;
  plane.normal = normalize({0.3, 0.1, 1.0});
  plane.offset = dot(plane.normal, Vec3{0, 0, 2.0});
  const std::int64_t H = 16, W = 20;
  auto res = render({plane}, H, W, 10.0);
  REQUIRE(res.complete);
  const double f = static_cast<double>(W);
  for (std::int64_t r = 0; r < H; ++r) {
    double prev = -1.0;
    bool first = true;
    for (std::int64_t c = 0; c < W; ++c) {
      Vec3 dir{(c + 0.5 - W / 2.0) / f, (r + 0.5 - H / 2.0) / f, 1.0};
      const double expect = plane.offset / dot(plane.normal, dir);
      const double got = res.depth.at(r * W + c);
      CHECK(std::abs(got - expect) < 1e-9);
      if (!first) CHECK(got < prev);  // n.x > 0: deeper toward the left
      prev = got;
      first = false;
    }
  }
}

TEST_CASE("generate_scene is deterministic in the seed") {
  auto cfg = small_cfg();
  Scene a = generate_scene(cfg, 42);
  Scene b = generate_scene(cfg, 42);
  REQUIRE(a.gt_depth.size() == b.gt_depth.size());
  for (std::int64_t i = 0; i < a.gt_depth.size(); ++i) CHECK(a.gt_depth.at(i) == b.gt_depth.at(i));
  for (std::int64_t i = 0; i < a.image.size(); ++i) CHECK(a.image.at(i) == b.image.at(i));
  CHECK(a.landmarks.uv == b.landmarks.uv);
  CHECK(a.landmarks.d_in == b.landmarks.d_in);
  CHECK(a.landmarks.valid == b.landmarks.valid);
  CHECK(a.landmarks.is_outlier == b.landmarks.is_outlier);

  Scene c = generate_scene(cfg, 43);
  bool all_same = true;
  for (std::int64_t i = 0; i < a.gt_depth.size() && all_same; ++i)
    all_same = a.gt_depth.at(i) == c.gt_depth.at(i);
  CHECK_FALSE(all_same);
}

TEST_CASE("scene invariants: depth range, landmark coords, exact depths") {
  auto cfg = small_cfg();
  cfg.outlier_rate = 0.3;
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    Scene s = generate_scene(cfg, seed);
    for (std::int64_t p = 0; p < s.gt_depth.size(); ++p) {
      CHECK(s.gt_depth.at(p) > 0.0);
      CHECK(s.gt_depth.at(p) <= cfg.d_max);
    }
    const auto& lm = s.landmarks;
    for (std::int64_t i = 0; i < lm.size(); ++i) {
      const auto col = lm.uv[2 * static_cast<size_t>(i)];
      const auto row = lm.uv[2 * static_cast<size_t>(i) + 1];
      CHECK(col >= 0);
      CHECK(col < cfg.width);
      CHECK(row >= 0);
      CHECK(row < cfg.height);
      if (lm.valid[static_cast<size_t>(i)]) {
        CHECK(lm.d_in[static_cast<size_t>(i)] > 0.0);
        if (!lm.is_outlier[static_cast<size_t>(i)]) {
          // exact copy of the ground truth
          CHECK(lm.d_in[static_cast<size_t>(i)] == s.gt_depth.at(row * cfg.width + col));
        }
      } else {
        CHECK(lm.d_in[static_cast<size_t>(i)] == 0.0);
        CHECK(lm.uv[2 * static_cast<size_t>(i)] == 0);
        CHECK(lm.uv[2 * static_cast<size_t>(i) + 1] == 0);
      }
    }
  }
}

TEST_CASE("landmark padding and subselection sizes") {
  auto cfg = small_cfg();
  Scene base = generate_scene(cfg, 7);

  // k == n_fixed, no outliers: everything valid
  cfg.landmark_density = static_cast<double>(cfg.n_fixed) / (24 * 32);
  cfg.outlier_rate = 0.0;
  auto lm = sample_landmarks(base.gt_depth, base.image, cfg, 7);
  CHECK(lm.count_valid() == cfg.n_fixed);
  CHECK(lm.size() == cfg.n_fixed);

  // k < n_fixed: exactly n_fixed - k padding entries
  cfg.landmark_density = 5.0 / (24 * 32);
  lm = sample_landmarks(base.gt_depth, base.image, cfg, 7);
  CHECK(lm.size() == cfg.n_fixed);
  CHECK(lm.count_valid() == 5);

  // k > n_fixed: uniform subselection down to n_fixed
  cfg.landmark_density = 100.0 / (24 * 32);
  lm = sample_landmarks(base.gt_depth, base.image, cfg, 7);
  CHECK(lm.size() == cfg.n_fixed);
  CHECK(lm.count_valid() == cfg.n_fixed);

  // count(valid) == min(k, n_fixed) across random configs
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const std::int64_t k = 1 + static_cast<std::int64_t>(seed % 40);
    cfg.landmark_density = static_cast<double>(k) / (24 * 32);
    lm = sample_landmarks(base.gt_depth, base.image, cfg, seed);
    CHECK(lm.count_valid() == std::min<std::int64_t>(k, cfg.n_fixed));
  }
}

TEST_CASE("edge-biased sampling concentrates on the albedo edge") {
  const std::int64_t H = 16, W = 32;
  std::vector<double> img(static_cast<size_t>(H * W * 3));
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch)
        img[static_cast<size_t>((r * W + c) * 3 + ch)] = c < W / 2 ? 0.2 : 0.9;
  Tensor image({H, W, 3}, std::move(img));
  Tensor depth = Tensor::full({H, W}, 2.0);

  SceneConfig cfg;
  cfg.height = H;
  cfg.width = W;
  cfg.sampling_bias = 1.0;
  cfg.landmark_density = 3.0 / static_cast<double>(H * W);
  cfg.n_fixed = 3;

  std::int64_t near_edge = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto lm = sample_landmarks(depth, image, cfg, seed);
    for (std::int64_t i = 0; i < lm.size(); ++i) {
      if (!lm.valid[static_cast<size_t>(i)]) continue;
      ++total;
      if (std::abs(lm.uv[2 * static_cast<size_t>(i)] - (W / 2 - 1)) <= 2) ++near_edge;
    }
  }
  CHECK(total == 3000);
  CHECK(static_cast<double>(near_edge) / static_cast<double>(total) >= 0.8);
}

TEST_CASE("dataset_stats densities and histograms") {
  auto cfg = small_cfg();
  cfg.landmark_density = 10.0 / (24 * 32);
  Scene s = generate_scene(cfg, 3);
  auto st = dataset_stats({s}, cfg.d_max);
  CHECK(st.mean_density == doctest::Approx(10.0 / (24 * 32)).epsilon(1e-12));

  // constant-depth scene: single occupied bin in both histograms
  Surface plane;
  plane.normal = {0, 0, 1};
  plane.offset = 2.0;
  auto res = render({plane}, 16, 16, 10.0);
  Scene flat;
  flat.gt_depth = res.depth;
  flat.image = res.image;
  flat.gt_valid = Tensor::full({16, 16}, 1.0);
  SceneConfig fcfg;
  fcfg.height = fcfg.width = 16;
  fcfg.landmark_density = 4.0 / 256;
  fcfg.n_fixed = 4;
  flat.landmarks = sample_landmarks(flat.gt_depth, flat.image, fcfg, 1);
  auto st2 = dataset_stats({flat}, 10.0);
  int lm_bins = 0, gt_bins = 0;
  for (auto v : st2.landmark_depth_hist) lm_bins += v > 0;
  for (auto v : st2.gt_depth_hist) gt_bins += v > 0;
  CHECK(lm_bins == 1);
  CHECK(gt_bins == 1);

  // 100 scenes in the sub-0.1% density regime: reported within 5%
  SceneConfig dcfg;
  dcfg.height = 48;
  dcfg.width = 64;
  dcfg.landmark_density = 0.001;
  dcfg.n_fixed = 8;
  std::vector<Scene> scenes;
  for (std::uint64_t i = 0; i < 100; ++i) scenes.push_back(generate_scene(dcfg, 1000 + i));
  auto st3 = dataset_stats(scenes, dcfg.d_max);
  CHECK(st3.mean_density >= 0.00095);
  CHECK(st3.mean_density <= 0.00105);
}

TEST_CASE("resample_landmarks applies count and outlier overrides") {
  auto cfg = small_cfg();
  Scene s = generate_scene(cfg, 11);
  auto lm = resample_landmarks(s, 32, 0.0, cfg.sampling_bias, cfg.d_min, cfg.d_max, 5);
  CHECK(lm.size() == 32);
  CHECK(lm.count_valid() == 32);
  for (std::int64_t i = 0; i < lm.size(); ++i) CHECK(lm.is_outlier[static_cast<size_t>(i)] == 0);

  auto lm2 = resample_landmarks(s, 200, 0.5, cfg.sampling_bias, cfg.d_min, cfg.d_max, 5);
  CHECK(lm2.count_valid() == 200);
  std::int64_t outliers = 0;
  for (std::int64_t i = 0; i < lm2.size(); ++i) outliers += lm2.is_outlier[static_cast<size_t>(i)];
  CHECK(outliers > 50);  // ~100 expected at rate 0.5
  CHECK(outliers < 150);
}

TEST_CASE("scene file round trip and manifest") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "spf_scene_test";
  fs::create_directories(dir);

  auto cfg = small_cfg();
  cfg.outlier_rate = 0.2;
  Scene s = generate_scene(cfg, 99);
  const std::string path = (dir / "scene0.spfs").string();
  write_scene(path, s);
  Scene r = read_scene(path);

  for (std::int64_t i = 0; i < s.gt_depth.size(); ++i) CHECK(r.gt_depth.at(i) == s.gt_depth.at(i));
  for (std::int64_t i = 0; i < s.image.size(); ++i) CHECK(r.image.at(i) == s.image.at(i));
  CHECK(r.landmarks.uv == s.landmarks.uv);
  CHECK(r.landmarks.d_in == s.landmarks.d_in);
  CHECK(r.landmarks.valid == s.landmarks.valid);
  CHECK(r.landmarks.is_outlier == s.landmarks.is_outlier);

  // regeneration writes identical bytes
  const std::string path2 = (dir / "scene0b.spfs").string();
  write_scene(path2, generate_scene(cfg, 99));
  CHECK(hash_file(path) == hash_file(path2));

  write_manifest((dir / "manifest.txt").string(), cfg, {"scene0.spfs"});
  auto m = read_manifest((dir / "manifest.txt").string());
  CHECK(m.cfg.height == cfg.height);
  CHECK(m.cfg.landmark_density == cfg.landmark_density);
  CHECK(m.cfg.outlier_rate == cfg.outlier_rate);
  REQUIRE(m.files.size() == 1);
  Scene again = read_scene(m.files[0]);
  CHECK(again.gt_depth.size() == s.gt_depth.size());
  fs::remove_all(dir);
}

TEST_CASE("generator rejects invalid configs") {
  SceneConfig cfg = small_cfg();
  cfg.landmark_density = 0.0;
  CHECK_THROWS_AS(generate_scene(cfg, 1), std::runtime_error);
  cfg = small_cfg();
  cfg.outlier_rate = 1.0;
  CHECK_THROWS_AS(generate_scene(cfg, 1), std::runtime_error);
  cfg = small_cfg();
  cfg.landmark_density = 2.0;  // k > H*W
  CHECK_THROWS_AS(generate_scene(cfg, 1), std::runtime_error);
}
