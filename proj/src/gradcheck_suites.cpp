#include <cmath>

#include "spf/depthnet.hpp"
#include "spf/gradcheck.hpp"
#include "spf/rng.hpp"
#include "spf/scene.hpp"
#include "spf/sparseformer.hpp"

namespace spf::gradcheck {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

std::vector<Tensor> flatten_sf(sf::SparseFormerParams& p) {
  std::vector<Tensor> out;
  p.visit("sf", [&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

void unflatten_sf(sf::SparseFormerParams& p, const std::vector<Tensor>& flat, size_t offset) {
  size_t i = offset;
  p.visit("sf", [&](const std::string&, Tensor& t) { t = flat[i++]; });
}

scene::LandmarkSet tiny_landmarks(std::int64_t H, std::int64_t W, Rng& rng) {
  scene::LandmarkSet lm;
  const int n = 3;  // two valid, one padded
  lm.uv.assign(2 * n, 0);
  lm.d_in.assign(n, 0.0);
  lm.valid.assign(n, 0);
  lm.is_outlier.assign(n, 0);
  for (int i = 0; i < 2; ++i) {
    lm.uv[static_cast<size_t>(2 * i)] = static_cast<std::int32_t>(rng.uniform_int(0, W - 1));
    lm.uv[static_cast<size_t>(2 * i + 1)] = static_cast<std::int32_t>(rng.uniform_int(0, H - 1));
    lm.d_in[static_cast<size_t>(i)] = rng.uniform(1.0, 8.0);
    lm.valid[static_cast<size_t>(i)] = 1;
  }
  return lm;
}

}  // namespace

Report sparseformer_suite(std::uint64_t seed) {
  Rng rng(seed, /*stream=*/202);
  sf::SparseFormerConfig cfg;
  cfg.channels = 2;
  cfg.pos_bands = 1;
  cfg.attn_width = 4;
  cfg.refine_layers = 2;
  cfg.refine_heads = 2;
  const std::int64_t H = 4, W = 4;

  sf::SparseFormerParams base = sf::init_sparseformer(cfg, rng);
  scene::LandmarkSet lm = tiny_landmarks(H, W, rng);
  Tensor f = random_tensor(rng, {H, W, cfg.channels});
  Tensor r_d = random_tensor(rng, {H, W});
  Tensor r_m = random_tensor(rng, {H, W});
  Tensor r_f = random_tensor(rng, {H, W, cfg.channels});

  std::vector<Tensor> inputs;
  inputs.push_back(f);
  for (Tensor& t : flatten_sf(base)) inputs.push_back(t);

  auto fn = [&](const std::vector<Tensor>& in) {
    sf::SparseFormerParams p = base;
    unflatten_sf(p, in, 1);
    auto out = sf::sparseformer_forward(in[0], lm, 1, p, cfg);
    Tensor s = mean_all(mul(out.d_out, r_d));
    s = add(s, mean_all(mul(out.confidence, r_m)));
    s = add(s, mean_all(mul(out.f_fused, r_f)));
    return s;
  };
  Report rep = grad_check_multi("sparseformer", fn, inputs, 1e-5, 1e-4);
  return rep;
}

Report model_suite(std::uint64_t seed) {
  Rng rng(seed, /*stream=*/203);
  net::ModelConfig cfg;
  cfg.enc_channels = {2, 3, 4, 5};
  cfg.dec_channels = {4, 3, 2, 2};
  cfg.attn_width = 3;
  cfg.pos_bands = 1;
  cfg.refine_layers = 1;
  cfg.refine_heads = 1;
  const std::int64_t H = 16, W = 16;

  net::ModelParams base = net::init_model(cfg, seed);
  scene::LandmarkSet lm = tiny_landmarks(H, W, rng);
  Tensor image = random_tensor(rng, {H, W, 3}, 0.0, 1.0);
  Tensor r_final = random_tensor(rng, {H, W});
  std::vector<Tensor> r_scales;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t hs = H / (8 >> s), ws = W / (8 >> s);
    r_scales.push_back(random_tensor(rng, {hs, ws}));
  }

  std::vector<Tensor> flat;
  base.visit([&](const std::string&, Tensor& t) { flat.push_back(t); });
  std::vector<Tensor> inputs;
  inputs.push_back(image);
  for (Tensor& t : flat) inputs.push_back(t);

  auto fn = [&](const std::vector<Tensor>& in) {
    net::ModelParams p = base;
    size_t i = 1;
    p.visit([&](const std::string&, Tensor& t) { t = in[i++]; });
    auto out = net::forward(in[0], lm, p, cfg);
    Tensor s = mean_all(mul(out.final_depth, r_final));
    for (int sc = 0; sc < 4; ++sc)
      s = add(s, mean_all(mul(out.d_outs[static_cast<size_t>(sc)], r_scales[static_cast<size_t>(sc)])));
    return s;
  };
  Report rep = grad_check_multi("model", fn, inputs, 1e-5, 1e-3);
  return rep;
}

}  // namespace spf::gradcheck
