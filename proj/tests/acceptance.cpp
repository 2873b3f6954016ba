// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Usage: acceptance <path-to-spf-cli> [work-dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spf/bench.hpp"
#include "spf/depthnet.hpp"
#include "spf/gradcheck.hpp"
#include "spf/rng.hpp"
#include "spf/scene.hpp"
#include "spf/sparseformer.hpp"
#include "spf/tensor.hpp"
#include "spf/train_eval.hpp"
#include "spf/util.hpp"
#include "spf/viz.hpp"

namespace fs = std::filesystem;
using namespace spf;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

Tensor rand_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

scene::LandmarkSet random_landmarks(Rng& rng, std::int64_t H, std::int64_t W, int n,
                                    int n_valid) {
  scene::LandmarkSet lm;
  lm.uv.assign(static_cast<size_t>(2 * n), 0);
  lm.d_in.assign(static_cast<size_t>(n), 0.0);
  lm.valid.assign(static_cast<size_t>(n), 0);
  lm.is_outlier.assign(static_cast<size_t>(n), 0);
  for (int i = 0; i < n_valid; ++i) {
    lm.uv[static_cast<size_t>(2 * i)] = static_cast<std::int32_t>(rng.uniform_int(0, W - 1));
    lm.uv[static_cast<size_t>(2 * i + 1)] = static_cast<std::int32_t>(rng.uniform_int(0, H - 1));
    lm.d_in[static_cast<size_t>(i)] = rng.uniform(0.5, 9.5);
    lm.valid[static_cast<size_t>(i)] = 1;
  }
  return lm;
}

// ---- criterion 1: gradient suites ------------------------------------------------

void criterion_1() {
  const auto t0 = Clock::now();
  auto tr = gradcheck::tensor_suite(2024);
  auto sr = gradcheck::sparseformer_suite(515);
  auto mr = gradcheck::model_suite(99);
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os.precision(3);
  os << "tensor " << tr.max_rel_err << " (tol 1e-5), block " << sr.max_rel_err
     << " (tol 1e-4), model " << mr.max_rel_err << " (tol 1e-3), " << secs << " s";
  report("criterion 1 gradient suites", tr.pass() && sr.pass() && mr.pass() && secs < 300.0,
         os.str());
}

// ---- criteria 2/3: attention invariants and the convex bound ----------------------

void criterion_2() {
  Rng rng(22, 1);
  std::int64_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t hw = 1 + rng.uniform_int(0, 39);
    const std::int64_t n = 1 + rng.uniform_int(0, 11);
    const std::int64_t dr = 3 + rng.uniform_int(0, 8);
    const std::int64_t ca = 1 + rng.uniform_int(0, 7);
    Tensor f_d = rand_tensor(rng, {hw, dr - 1}, -3.0, 3.0);
    Tensor f_s = rand_tensor(rng, {n, dr}, -3.0, 3.0);
    std::vector<double> mask(static_cast<size_t>(n), 0.0);
    std::int64_t nv = 0;
    for (auto& m : mask) {
      m = rng.uniform() < 0.7 ? 1.0 : 0.0;
      nv += m != 0.0;
    }
    if (nv == 0) {
      mask[static_cast<size_t>(rng.uniform_int(0, n - 1))] = 1.0;
    }
    Tensor valid({n}, mask);
    auto av = sf::attention_volume(f_d, f_s, valid, rand_tensor(rng, {dr, ca}),
                                   rand_tensor(rng, {dr, ca}));
    for (std::int64_t p = 0; p < hw; ++p) {
      double sum = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double a = av.a.at(p * n + i);
        if (a < 0.0) ++violations;
        if (mask[static_cast<size_t>(i)] == 0.0 && a != 0.0) ++violations;
        sum += a;
      }
      if (std::abs(sum - 1.0) > 1e-6) ++violations;
    }
  }
  report("criterion 2 attention invariants", violations == 0,
         "1000 random volumes, " + std::to_string(violations) + " violations");
}

void criterion_3() {
  Rng rng(33, 1);
  std::int64_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    sf::SparseFormerConfig cfg;
    cfg.channels = 1 + rng.uniform_int(0, 3);
    cfg.pos_bands = static_cast<int>(rng.uniform_int(0, 2));
    cfg.attn_width = 2 + rng.uniform_int(0, 6);
    cfg.refine_layers = static_cast<int>(rng.uniform_int(0, 2));
    cfg.refine_heads = 1 + static_cast<int>(rng.uniform_int(0, 1));
    auto params = sf::init_sparseformer(cfg, rng);
    const std::int64_t H = 2 + rng.uniform_int(0, 5), W = 2 + rng.uniform_int(0, 5);
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 6));
    const int nv = 1 + static_cast<int>(rng.uniform_int(0, n - 1));
    auto lm = random_landmarks(rng, H, W, n, nv);
    Tensor f = rand_tensor(rng, {H, W, cfg.channels});
    auto out = sf::sparseformer_forward(f, lm, 1, params, cfg);
    double dmin = 1e300, dmax = -1e300;
    for (int i = 0; i < n; ++i) {
      if (!lm.valid[static_cast<size_t>(i)]) continue;
      dmin = std::min(dmin, lm.d_in[static_cast<size_t>(i)]);
      dmax = std::max(dmax, lm.d_in[static_cast<size_t>(i)]);
    }
    for (std::int64_t p = 0; p < H * W; ++p) {
      const double d = out.d_out.at(p);
      if (d < dmin - 1e-12 || d > dmax + 1e-12) ++violations;
    }
  }
  report("criterion 3 convex-combination bound", violations == 0,
         "1000 random blocks, " + std::to_string(violations) + " violations");
}

// ---- criterion 4: permutation and padding invariance -------------------------------

void criterion_4() {
  Rng rng(44, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    sf::SparseFormerConfig cfg;
    cfg.channels = 2 + rng.uniform_int(0, 2);
    cfg.pos_bands = 1 + static_cast<int>(rng.uniform_int(0, 2));
    cfg.attn_width = 4;
    auto params = sf::init_sparseformer(cfg, rng);
    const std::int64_t H = 4, W = 6;
    const int n = 3 + static_cast<int>(rng.uniform_int(0, 3));
    auto lm = random_landmarks(rng, H, W, n, n);
    Tensor f = rand_tensor(rng, {H, W, cfg.channels});
    auto base = sf::sparseformer_forward(f, lm, 1, params, cfg);

    // random cyclic shift of the landmark order
    const int shift = 1 + static_cast<int>(rng.uniform_int(0, n - 2));
    scene::LandmarkSet perm = lm;
    for (int i = 0; i < n; ++i) {
      const int j = (i + shift) % n;
      perm.uv[static_cast<size_t>(2 * i)] = lm.uv[static_cast<size_t>(2 * j)];
      perm.uv[static_cast<size_t>(2 * i + 1)] = lm.uv[static_cast<size_t>(2 * j + 1)];
      perm.d_in[static_cast<size_t>(i)] = lm.d_in[static_cast<size_t>(j)];
      perm.valid[static_cast<size_t>(i)] = lm.valid[static_cast<size_t>(j)];
    }
    auto permuted = sf::sparseformer_forward(f, perm, 1, params, cfg);

    scene::LandmarkSet padded = lm;
    for (int extra = 0; extra < 3; ++extra) {
      padded.uv.push_back(0);
      padded.uv.push_back(0);
      padded.d_in.push_back(0.0);
      padded.valid.push_back(0);
      padded.is_outlier.push_back(0);
    }
    auto pad_out = sf::sparseformer_forward(f, padded, 1, params, cfg);

    for (std::int64_t p = 0; p < H * W; ++p) {
      worst = std::max(worst, std::abs(base.d_out.at(p) - permuted.d_out.at(p)));
      worst = std::max(worst, std::abs(base.confidence.at(p) - permuted.confidence.at(p)));
      worst = std::max(worst, std::abs(base.d_out.at(p) - pad_out.d_out.at(p)));
      worst = std::max(worst, std::abs(base.confidence.at(p) - pad_out.confidence.at(p)));
    }
  }
  std::ostringstream os;
  os << "100 trials each, max |delta| = " << worst;
  report("criterion 4 permutation/padding invariance", worst <= 1e-9, os.str());
}

// ---- criterion 5: degenerate cases -------------------------------------------------

void criterion_5() {
  Rng rng(55, 1);
  sf::SparseFormerConfig cfg;
  cfg.channels = 3;
  auto params = sf::init_sparseformer(cfg, rng);
  Tensor f = rand_tensor(rng, {4, 4, 3});

  auto lone = random_landmarks(rng, 4, 4, 3, 1);
  lone.d_in[0] = 4.25;
  auto out1 = sf::sparseformer_forward(f, lone, 1, params, cfg);
  bool exact = !out1.zero_landmarks;
  for (std::int64_t p = 0; p < 16; ++p) exact = exact && out1.d_out.at(p) == 4.25;

  auto none = random_landmarks(rng, 4, 4, 3, 0);
  auto out0 = sf::sparseformer_forward(f, none, 1, params, cfg);
  bool identity = out0.zero_landmarks;
  for (std::int64_t i = 0; i < f.size(); ++i) identity = identity && out0.f_fused.at(i) == f.at(i);
  for (std::int64_t p = 0; p < 16; ++p) identity = identity && out0.d_out.at(p) == 0.0;

  report("criterion 5 degenerate cases", exact && identity,
         std::string("N=1 exact constant map: ") + (exact ? "yes" : "no") +
             ", zero-landmark identity+flag: " + (identity ? "yes" : "no"));
}

// ---- criterion 6: linear scaling ----------------------------------------------------

void criterion_6() {
  const auto t0 = Clock::now();
  auto result = bench::run({64, 128, 256}, {256}, 9, 1);
  const double secs = seconds_since(t0);
  bool ok = result.rows.size() == 3;
  std::ostringstream os;
  os.precision(3);
  for (size_t i = 1; i < result.rows.size(); ++i) {
    const double ratio = result.rows[i].median_ms / result.rows[i - 1].median_ms;
    os << "ratio " << result.rows[i - 1].height << "->" << result.rows[i].height << " = " << ratio
       << ", ";
    ok = ok && ratio >= 3.0 && ratio <= 5.0;
  }
  const double exponent = result.exponents.empty() ? -1.0 : result.exponents[0].second;
  os << "exponent " << exponent << ", " << secs << " s";
  ok = ok && exponent >= 0.8 && exponent <= 1.3 && secs < 120.0;
  report("criterion 6 linear attention scaling", ok, os.str());
}

// ---- criterion 7: metric and optimizer oracles --------------------------------------

void criterion_7() {
  Rng rng(77, 1);
  double worst = 0.0;

  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t n = 20 + rng.uniform_int(0, 180);
    std::vector<double> pv(static_cast<size_t>(n)), gv(static_cast<size_t>(n)),
        vv(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      pv[static_cast<size_t>(i)] = rng.uniform(0.2, 9.5);
      gv[static_cast<size_t>(i)] = rng.uniform(0.2, 9.5);
      vv[static_cast<size_t>(i)] = rng.uniform() < 0.8 ? 1.0 : 0.0;
    }
    vv[0] = 1.0;
    auto m = train::compute_metrics(Tensor({n}, pv), Tensor({n}, gv), Tensor({n}, vv));
    double srel = 0, ssq = 0;
    std::int64_t cnt = 0, c1 = 0, c2 = 0, c3 = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      if (vv[static_cast<size_t>(i)] == 0.0) continue;
      const double p = pv[static_cast<size_t>(i)], g = gv[static_cast<size_t>(i)];
      srel += std::abs((g - p) / g);
      ssq += (g - p) * (g - p);
      const double r = std::max(g / p, p / g);
      c1 += r < 1.25;
      c2 += r < 1.5625;
      c3 += r < 1.953125;
      ++cnt;
    }
    worst = std::max(worst, std::abs(m.rel - srel / static_cast<double>(cnt)));
    worst = std::max(worst, std::abs(m.rmse - std::sqrt(ssq / static_cast<double>(cnt))));
    worst = std::max(worst, std::abs(m.a1 - static_cast<double>(c1) / static_cast<double>(cnt)));
    worst = std::max(worst, std::abs(m.a2 - static_cast<double>(c2) / static_cast<double>(cnt)));
    worst = std::max(worst, std::abs(m.a3 - static_cast<double>(c3) / static_cast<double>(cnt)));
  }

  // adam vs an independent per-coordinate loop, several steps, random gradients
  net::ModelConfig mc;
  mc.enc_channels = {2, 3, 4, 5};
  mc.dec_channels = {4, 3, 2, 2};
  mc.attn_width = 3;
  mc.pos_bands = 1;
  mc.refine_layers = 1;
  mc.refine_heads = 1;
  auto params = net::init_model(mc, 7);
  std::vector<std::string> names;
  std::vector<std::vector<double>> oracle, om, ov;
  params.visit([&](const std::string& nm, Tensor& t) {
    names.push_back(nm);
    oracle.emplace_back(t.data().begin(), t.data().end());
    om.emplace_back(t.size(), 0.0);
    ov.emplace_back(t.size(), 0.0);
  });
  train::AdamConfig acfg;
  acfg.lr = 0.004;
  train::Adam adam(acfg);
  for (int step = 1; step <= 4; ++step) {
    std::map<std::string, Tensor> grads;
    std::vector<Tensor> gs;
    size_t pi = 0;
    params.visit([&](const std::string& nm, Tensor& t) {
      Tensor g = rand_tensor(rng, t.shape());
      grads.emplace(nm, g);
      gs.push_back(g);
      ++pi;
    });
    adam.step(params, grads);
    for (size_t p = 0; p < oracle.size(); ++p) {
      for (size_t i = 0; i < oracle[p].size(); ++i) {
        const double g = gs[p].at(static_cast<std::int64_t>(i));
        om[p][i] = acfg.beta1 * om[p][i] + (1 - acfg.beta1) * g;
        ov[p][i] = acfg.beta2 * ov[p][i] + (1 - acfg.beta2) * g * g;
        const double mh = om[p][i] / (1 - std::pow(acfg.beta1, step));
        const double vh = ov[p][i] / (1 - std::pow(acfg.beta2, step));
        oracle[p][i] -= acfg.lr * mh / (std::sqrt(vh) + acfg.eps);
      }
    }
  }
  size_t pi = 0;
  params.visit([&](const std::string&, Tensor& t) {
    for (std::int64_t i = 0; i < t.size(); ++i)
      worst = std::max(worst, std::abs(t.at(i) - oracle[pi][static_cast<size_t>(i)]));
    ++pi;
  });

  std::ostringstream os;
  os.precision(3);
  os << "max |delta| vs oracles = " << worst;
  report("criterion 7 metric/optimizer oracles", worst <= 1e-12, os.str());
}

// ---- criteria 8 + 9: desk-scale training -------------------------------------------

scene::SceneConfig desk_scene_config(double outlier_rate) {
  scene::SceneConfig cfg;
  cfg.height = 48;
  cfg.width = 64;
  cfg.n_planes = 3;
  cfg.n_boxes = 1;
  cfg.landmark_density = 32.0 / (48.0 * 64.0);
  cfg.n_fixed = 40;
  cfg.outlier_rate = outlier_rate;
  cfg.sampling_bias = 0.7;
  return cfg;
}

std::string gen_dataset(const fs::path& dir, int scenes, const scene::SceneConfig& cfg,
                        std::uint64_t seed) {
  fs::create_directories(dir);
  std::vector<std::string> files;
  for (int i = 0; i < scenes; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%06d.spfs", i);
    scene::write_scene((dir / name).string(),
                       scene::generate_scene(cfg, seed + static_cast<std::uint64_t>(i)));
    files.push_back(name);
  }
  const std::string manifest = (dir / "manifest.txt").string();
  scene::write_manifest(manifest, cfg, files);
  return manifest;
}

void criterion_8(const fs::path& work) {
  const auto t0 = Clock::now();
  const std::string manifest = gen_dataset(work / "data8", 1000, desk_scene_config(0.0), 9000);

  train::TrainConfig tc;
  tc.manifest = manifest;
  tc.out_dir = (work / "run8").string();
  tc.iterations = 20000;
  tc.batch = 8;
  tc.val_every = 500;
  tc.ckpt_every = 5000;
  tc.log_every = 500;
  tc.seed = 8;
  auto result = train::train(tc);
  const double train_secs = seconds_since(t0);

  auto rows = train::evaluate(result.checkpoint_path, manifest, {2, 32}, {0.0}, 4242);
  const auto& rel2 = rows[0].metrics;
  const auto& rel32 = rows[1].metrics;
  {
    std::ostringstream os;
    os.precision(4);
    os << "REL@32 = " << rel32.rel << " (<= 0.05), a1@32 = " << rel32.a1
       << " (>= 0.95), REL@2 = " << rel2.rel << ", train " << train_secs / 60.0 << " min";
    report("criterion 8 desk-scale training",
           rel32.rel <= 0.05 && rel32.a1 >= 0.95 && rel32.rel < rel2.rel, os.str());
  }

  // trained-model spot checks from the block's contract
  auto ck = net::load_checkpoint(result.checkpoint_path);
  {
    // full-frame fronto-parallel plane: prediction within 5% on >= 95% of pixels
    scene::Surface plane;
    plane.kind = scene::Surface::Kind::Background;
    plane.normal = {0, 0, 1};
    plane.offset = 3.0;
    plane.albedo = {0.6, 0.55, 0.5};
    auto res = scene::render({plane}, 48, 64, 10.0);
    scene::Scene sc;
    sc.gt_depth = res.depth;
    sc.image = res.image;
    sc.gt_valid = Tensor::full({48, 64}, 1.0);
    auto cfgp = desk_scene_config(0.0);
    sc.landmarks = scene::sample_landmarks(sc.gt_depth, sc.image, cfgp, 31337);
    auto out = net::forward(sc.image, sc.landmarks, ck.params, ck.cfg);
    std::int64_t close = 0;
    for (std::int64_t p = 0; p < out.final_depth.size(); ++p)
      close += std::abs(out.final_depth.at(p) - 3.0) / 3.0 <= 0.05;
    const double frac = static_cast<double>(close) / static_cast<double>(out.final_depth.size());
    std::ostringstream os;
    os.precision(4);
    os << "fraction within 5% of the plane depth = " << frac << " (>= 0.95)";
    report("criterion 8b plane-scene prediction", frac >= 0.95, os.str());
  }
  {
    // two-plane scene: attention argmax regions align with the surface map
    scene::Surface back;
    back.kind = scene::Surface::Kind::Background;
    back.normal = {0, 0, 1};
    back.offset = 6.0;
    back.albedo = {0.3, 0.5, 0.8};
    back.id = 0;
    scene::Surface card;
    card.kind = scene::Surface::Kind::Card;
    card.normal = {0, 0, 1};
    card.offset = 3.0;
    card.center = {0.2, 0.1, 3.0};
    card.axis_u = {1, 0, 0};
    card.axis_v = {0, 1, 0};
    card.half_u = 0.8;
    card.half_v = 0.55;
    card.albedo = {0.9, 0.6, 0.2};
    card.id = 1;
    auto res = scene::render({back, card}, 48, 64, 10.0);
    scene::Scene sc;
    sc.gt_depth = res.depth;
    sc.image = res.image;
    sc.gt_valid = Tensor::full({48, 64}, 1.0);
    auto cfgp = desk_scene_config(0.0);
    sc.landmarks = scene::sample_landmarks(sc.gt_depth, sc.image, cfgp, 777);
    auto out = net::forward(sc.image, sc.landmarks, ck.params, ck.cfg);
    auto maps = viz::attention_maps(out.attentions[3], sc.landmarks, 48, 64, sc.image);
    std::int64_t aligned = 0;
    for (std::int64_t p = 0; p < 48 * 64; ++p) {
      const auto li = maps.argmax[static_cast<size_t>(p)];
      const auto col = sc.landmarks.uv[static_cast<size_t>(2 * li)];
      const auto row = sc.landmarks.uv[static_cast<size_t>(2 * li + 1)];
      const int lm_surf = res.surface_id[static_cast<size_t>(row * 64 + col)];
      aligned += lm_surf == res.surface_id[static_cast<size_t>(p)];
    }
    const double frac = static_cast<double>(aligned) / (48.0 * 64.0);
    std::ostringstream os;
    os.precision(4);
    os << "argmax/surface agreement = " << frac << " (>= 0.70)";
    report("criterion 8c attention argmax alignment", frac >= 0.70, os.str());
  }
}

void criterion_9(const fs::path& work) {
  const std::string manifest = gen_dataset(work / "data9", 300, desk_scene_config(0.2), 9900);

  auto train_variant = [&](const std::string& name, int refine_layers) {
    train::TrainConfig tc;
    tc.manifest = manifest;
    tc.out_dir = (work / name).string();
    tc.iterations = 2500;
    tc.batch = 8;
    tc.val_every = 0;
    tc.ckpt_every = 0;
    tc.log_every = 500;
    tc.seed = 9;
    tc.model.refine_layers = refine_layers;
    return train::train(tc);
  };
  auto refined = train_variant("run9_refine", 2);
  auto ablated = train_variant("run9_identity", 0);

  auto eval_pair = [&](const std::string& ckpt) {
    auto rows = train::evaluate(ckpt, manifest, {32}, {0.0, 0.2}, 888);
    return std::make_pair(rows[0].metrics.rel, rows[1].metrics.rel);
  };
  auto [ref_clean, ref_noisy] = eval_pair(refined.checkpoint_path);
  auto [abl_clean, abl_noisy] = eval_pair(ablated.checkpoint_path);
  const double ref_factor = ref_noisy / ref_clean;
  const double abl_factor = abl_noisy / abl_clean;

  std::printf("  outlier robustness table (REL, 32 landmarks)\n");
  std::printf("  %-22s %10s %10s %10s\n", "model", "rate 0.0", "rate 0.2", "factor");
  std::printf("  %-22s %10.4f %10.4f %10.3f\n", "refinement (2 layers)", ref_clean, ref_noisy,
              ref_factor);
  std::printf("  %-22s %10.4f %10.4f %10.3f\n", "identity refinement", abl_clean, abl_noisy,
              abl_factor);
  std::ostringstream os;
  os.precision(4);
  os << "degradation factor " << ref_factor << " (refined) < " << abl_factor << " (ablated)";
  report("criterion 9 outlier robustness", ref_factor < abl_factor, os.str());
}

// ---- criterion 10: CLI determinism ---------------------------------------------------

int run_cmd(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc;
}

void criterion_10(const std::string& cli, const fs::path& work) {
  const fs::path d = work / "det";
  fs::remove_all(d);
  fs::create_directories(d);
  bool ok = true;
  std::ostringstream os;

  // gen twice: identical bytes
  const std::string gen_common = " gen --scenes 4 --height 48 --width 64 --density 0.0104 "
                                 "--n-fixed 40 --seed 77 > /dev/null";
  ok = ok && run_cmd(cli + gen_common + " --out " + (d / "g1").string()) == 0;
  ok = ok && run_cmd(cli + gen_common + " --out " + (d / "g2").string()) == 0;
  bool gen_same = true;
  for (int i = 0; i < 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%06d.spfs", i);
    gen_same = gen_same && util::fnv1a_file((d / "g1" / name).string()) ==
                               util::fnv1a_file((d / "g2" / name).string());
  }
  gen_same = gen_same && util::fnv1a_file((d / "g1" / "manifest.txt").string()) ==
                             util::fnv1a_file((d / "g2" / "manifest.txt").string());
  os << "gen " << (gen_same ? "identical" : "DIFFERS");

  // train twice on the generated data (tiny micro run through the CLI)
  const std::string train_common =
      " train --data " + (d / "g1" / "manifest.txt").string() +
      " --iterations 30 --batch 2 --val-every 10 --log-every 5 --ckpt-every 0 --seed 5 "
      "--enc-channels 2,3,4,5 --dec-channels 4,3,2,2 --attn-width 3 --pos-bands 1 "
      "--refine-layers 1 --refine-heads 1 > /dev/null";
  ok = ok && run_cmd(cli + train_common + " --out " + (d / "t1").string()) == 0;
  ok = ok && run_cmd(cli + train_common + " --out " + (d / "t2").string()) == 0;
  const bool train_same =
      util::fnv1a_file((d / "t1" / "log.csv").string()) ==
          util::fnv1a_file((d / "t2" / "log.csv").string()) &&
      util::fnv1a_file((d / "t1" / "checkpoint_final.spfc").string()) ==
          util::fnv1a_file((d / "t2" / "checkpoint_final.spfc").string());
  os << ", train " << (train_same ? "identical" : "DIFFERS");

  // eval twice
  const std::string eval_common = " eval --checkpoint " +
                                  (d / "t1" / "checkpoint_final.spfc").string() + " --data " +
                                  (d / "g1" / "manifest.txt").string() +
                                  " --points 2,8 --outlier-rates 0,0.2 --seed 3 > /dev/null";
  ok = ok && run_cmd(cli + eval_common + " --out " + (d / "e1.csv").string()) == 0;
  ok = ok && run_cmd(cli + eval_common + " --out " + (d / "e2.csv").string()) == 0;
  const bool eval_same = util::fnv1a_file((d / "e1.csv").string()) ==
                         util::fnv1a_file((d / "e2.csv").string());
  os << ", eval " << (eval_same ? "identical" : "DIFFERS");

  report("criterion 10 determinism", ok && gen_same && train_same && eval_same, os.str());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <spf-cli-path> [work-dir]\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::path("acceptance_work");
  fs::create_directories(work);

  const auto t0 = Clock::now();
  try {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8(work);
    criterion_9(work);
    criterion_10(cli, work);
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("acceptance finished in %.1f min, %d failure(s)\n", seconds_since(t0) / 60.0,
              g_failures);
  return g_failures == 0 ? 0 : 1;
}
