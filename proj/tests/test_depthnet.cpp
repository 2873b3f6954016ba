#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "spf/depthnet.hpp"
#include "spf/gradcheck.hpp"
#include "spf/rng.hpp"
#include "spf/scene.hpp"

using namespace spf;
using namespace spf::net;

namespace {

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.enc_channels = {2, 3, 4, 5};
  cfg.dec_channels = {4, 3, 2, 2};
  cfg.attn_width = 3;
  cfg.pos_bands = 1;
  cfg.refine_layers = 1;
  cfg.refine_heads = 1;
  return cfg;
}

scene::Scene micro_scene(std::int64_t H, std::int64_t W, std::uint64_t seed,
                         std::int64_t landmarks) {
  scene::SceneConfig cfg;
  cfg.height = H;
  cfg.width = W;
  cfg.n_planes = 2;
  cfg.n_boxes = 1;
  cfg.landmark_density = static_cast<double>(landmarks) / static_cast<double>(H * W);
  cfg.n_fixed = landmarks;
  return scene::generate_scene(cfg, seed);
}

}  // namespace

TEST_CASE("forward shape schedule on a 64x48 input") {
  auto cfg = micro_config();
  auto params = init_model(cfg, 3);
  auto sc = micro_scene(48, 64, 5, 8);
  auto out = forward(sc.image, sc.landmarks, params, cfg);
  REQUIRE(out.d_outs.size() == 4);
  CHECK(out.d_outs[0].shape() == Shape{6, 8});
  CHECK(out.d_outs[1].shape() == Shape{12, 16});
  CHECK(out.d_outs[2].shape() == Shape{24, 32});
  CHECK(out.d_outs[3].shape() == Shape{48, 64});
  CHECK(out.final_depth.shape() == Shape{48, 64});
  for (std::int64_t p = 0; p < out.final_depth.size(); ++p) {
    CHECK(std::isfinite(out.final_depth.at(p)));
    CHECK(out.final_depth.at(p) > 0.0);
  }
  CHECK_THROWS_AS(forward(Tensor::zeros({20, 20, 3}), sc.landmarks, params, cfg),
                  std::runtime_error);
}

TEST_CASE("zero-valid-landmark scene still produces finite depth") {
  auto cfg = micro_config();
  auto params = init_model(cfg, 7);
  auto sc = micro_scene(32, 32, 9, 4);
  scene::LandmarkSet empty;
  empty.uv.assign(8, 0);
  empty.d_in.assign(4, 0.0);
  empty.valid.assign(4, 0);
  empty.is_outlier.assign(4, 0);
  auto out = forward(sc.image, empty, params, cfg);
  for (int s = 0; s < 4; ++s) CHECK(out.zero_landmarks[static_cast<size_t>(s)]);
  for (std::int64_t p = 0; p < out.final_depth.size(); ++p)
    CHECK(std::isfinite(out.final_depth.at(p)));
  // the flagged stages contribute nothing to the loss but it still evaluates
  Tensor l = loss(out, sc.gt_depth, sc.gt_valid);
  CHECK(std::isfinite(l.value()));
}

TEST_CASE("parameter count and layout are a function of config alone") {
  auto cfg = micro_config();
  auto a = init_model(cfg, 1);
  auto b = init_model(cfg, 2);
  CHECK(a.param_count() == b.param_count());
  CHECK(a.param_count() == 4505);  // golden; changes mean the architecture changed

  std::vector<std::string> names_a, names_b;
  a.visit([&](const std::string& n, Tensor&) { names_a.push_back(n); });
  b.visit([&](const std::string& n, Tensor&) { names_b.push_back(n); });
  CHECK(names_a == names_b);

  ModelConfig big;  // the default desk-scale configuration
  auto c = init_model(big, 1);
  CHECK(c.param_count() == 463745);  // golden
}

TEST_CASE("downsample_gt pools only valid pixels") {
  Tensor gt({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor valid({2, 4}, {1, 0, 1, 1, 0, 0, 0, 1});
  auto [g2, v2] = downsample_gt(gt, valid, 2);
  REQUIRE(g2.shape() == Shape{1, 2});
  CHECK(g2.at(0) == doctest::Approx(1.0));          // only (0,0) valid in the block
  CHECK(g2.at(1) == doctest::Approx((3.0 + 4 + 8) / 3));
  CHECK(v2.at(0) == 1.0);
  CHECK(v2.at(1) == 1.0);

  Tensor none = Tensor::zeros({2, 4});
  auto [g3, v3] = downsample_gt(gt, none, 2);
  CHECK(v3.at(0) == 0.0);
  CHECK(v3.at(1) == 0.0);
}

TEST_CASE("loss: zero at perfect prediction, hand value, loop oracle") {
  const std::int64_t H = 16, W = 16;
  Rng rng(11);
  std::vector<double> gtv(static_cast<size_t>(H * W));
  for (auto& v : gtv) v = rng.uniform(1.0, 9.0);
  Tensor gt({H, W}, gtv);
  Tensor valid = Tensor::full({H, W}, 1.0);

  MultiScaleOutput perfect;
  perfect.final_depth = gt;
  for (int s = 0; s < 4; ++s) {
    const int factor = 8 >> s;
    auto [g, v] = downsample_gt(gt, valid, factor);
    perfect.d_outs.push_back(g);
    perfect.zero_landmarks.push_back(false);
  }
  CHECK(loss(perfect, gt, valid).value() == 0.0);

  // only the final scale off by a constant 1: l1 + l2 = 2 at weight 1.0
  MultiScaleOutput off = perfect;
  std::vector<double> shifted(gtv);
  for (auto& v : shifted) v += 1.0;
  off.final_depth = Tensor({H, W}, shifted);
  CHECK(loss(off, gt, valid).value() == doctest::Approx(2.0).epsilon(1e-12));

  // random outputs against an explicit per-scale oracle
  MultiScaleOutput randout;
  randout.final_depth = Tensor({H, W}, [&] {
    std::vector<double> v(static_cast<size_t>(H * W));
    for (auto& x : v) x = rng.uniform(0.5, 9.5);
    return v;
  }());
  double expected = 0.0;
  auto accum = [&](const Tensor& pred, const Tensor& g, const Tensor& v, double w) {
    double s1 = 0, s2 = 0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
      if (v.at(i) == 0.0) continue;
      s1 += std::abs(pred.at(i) - g.at(i));
      s2 += (pred.at(i) - g.at(i)) * (pred.at(i) - g.at(i));
      ++n;
    }
    expected += w * (s1 / static_cast<double>(n) + s2 / static_cast<double>(n));
  };
  accum(randout.final_depth, gt, valid, 1.0);
  const double weights[4] = {0.10, 0.15, 0.25, 0.50};
  for (int s = 0; s < 4; ++s) {
    const int factor = 8 >> s;
    auto [g, v] = downsample_gt(gt, valid, factor);
    Tensor pred(g.shape(), [&] {
      std::vector<double> vv(static_cast<size_t>(g.size()));
      for (auto& x : vv) x = rng.uniform(0.5, 9.5);
      return vv;
    }());
    randout.d_outs.push_back(pred);
    randout.zero_landmarks.push_back(false);
    accum(pred, g, v, weights[s]);
  }
  CHECK(loss(randout, gt, valid).value() == doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(loss(perfect, gt, Tensor::zeros({H, W})), std::runtime_error);
}

TEST_CASE("checkpoint round trip restores parameters and config exactly") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "spf_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.spfc").string();

  auto cfg = micro_config();
  auto params = init_model(cfg, 77);
  // training always keeps parameters f32-representable; mirror that here
  params.visit([&](const std::string&, Tensor& t) {
    auto v = t.raw();
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  });
  std::map<std::string, std::string> kv{{"note", "test"}};
  std::map<std::string, Tensor> extra{{"opt.m.head.w", Tensor::full({1, 1, 2, 1}, 0.5)}};
  save_checkpoint(path, cfg, kv, params, extra);

  auto ck = load_checkpoint(path);
  CHECK(ck.cfg.enc_channels == cfg.enc_channels);
  CHECK(ck.cfg.dec_channels == cfg.dec_channels);
  CHECK(ck.cfg.refine_layers == cfg.refine_layers);
  CHECK(ck.extra.at("note") == "test");
  REQUIRE(ck.extra_tensors.count("opt.m.head.w") == 1);

  bool all_equal = true;
  size_t i = 0;
  std::vector<Tensor> orig;
  params.visit([&](const std::string&, Tensor& t) { orig.push_back(t); });
  ck.params.visit([&](const std::string&, Tensor& t) {
    for (std::int64_t j = 0; j < t.size(); ++j)
      all_equal = all_equal && t.at(j) == orig[i].at(j);
    ++i;
  });
  CHECK(all_equal);
  fs::remove_all(dir);
}

TEST_CASE("micro model end-to-end gradients match finite differences") {
  auto rep = gradcheck::model_suite(99);
  INFO("max rel err ", rep.max_rel_err, " over ", rep.coords_checked, " coords");
  CHECK(rep.max_rel_err <= 1e-3);
}
