#include "spf/sparseformer.hpp"

#include <cmath>

namespace spf::sf {

namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor glorot(Rng& rng, Shape shape, std::int64_t fan_in, std::int64_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

SparseFormerParams init_sparseformer(const SparseFormerConfig& cfg, Rng& rng) {
  const std::int64_t dr = cfg.feat_width();
  const std::int64_t ca = cfg.attn_width;
  const std::int64_t c = cfg.channels;
  SparseFormerParams p;
  p.w_q = glorot(rng, {dr, ca}, dr, ca);
  p.w_k = glorot(rng, {dr, ca}, dr, ca);
  p.w_v = glorot(rng, {dr, ca}, dr, ca);
  p.w_o = glorot(rng, {ca, 1}, ca, 1);
  for (int l = 0; l < cfg.refine_layers; ++l) {
    RefinementLayerParams lp;
    lp.wq = glorot(rng, {dr, dr}, dr, dr);
    lp.wk = glorot(rng, {dr, dr}, dr, dr);
    lp.wv = glorot(rng, {dr, dr}, dr, dr);
    lp.wo = glorot(rng, {dr, dr}, dr, dr);
    lp.ff1 = glorot(rng, {dr, 2 * dr}, dr, 2 * dr);
    lp.ff2 = glorot(rng, {2 * dr, dr}, 2 * dr, dr);
    lp.ln1_g = Tensor::full({dr}, 1.0);
    lp.ln1_b = Tensor::zeros({dr});
    lp.ln2_g = Tensor::full({dr}, 1.0);
    lp.ln2_b = Tensor::zeros({dr});
    p.refinement.layers.push_back(std::move(lp));
  }
  p.fuse_w = glorot(rng, {1, 1, c + 2, c}, c + 2, c);
  p.fuse_b = Tensor::zeros({c});
  return p;
}

Tensor positional_encoding(std::int64_t H, std::int64_t W, int bands) {
  check(H >= 1 && W >= 1 && bands >= 0, "positional_encoding: bad arguments");
  const std::int64_t P = 2 + 4 * static_cast<std::int64_t>(bands);
  std::vector<double> v(static_cast<size_t>(H * W * P));
  for (std::int64_t r = 0; r < H; ++r) {
    const double y = H > 1 ? 2.0 * static_cast<double>(r) / static_cast<double>(H - 1) - 1.0 : 0.0;
    for (std::int64_t c = 0; c < W; ++c) {
      const double x =
          W > 1 ? 2.0 * static_cast<double>(c) / static_cast<double>(W - 1) - 1.0 : 0.0;
      double* out = v.data() + (r * W + c) * P;
      out[0] = x;
      out[1] = y;
      for (int j = 0; j < bands; ++j) {
        const double fx = std::ldexp(1.0, j) * kPi * x;
        const double fy = std::ldexp(1.0, j) * kPi * y;
        out[2 + 4 * j + 0] = std::sin(fx);
        out[2 + 4 * j + 1] = std::cos(fx);
        out[2 + 4 * j + 2] = std::sin(fy);
        out[2 + 4 * j + 3] = std::cos(fy);
      }
    }
  }
  return Tensor({H, W, P}, std::move(v));
}

Tensor landmark_valid_mask(const scene::LandmarkSet& lm) {
  std::vector<double> v(static_cast<size_t>(lm.size()));
  for (std::int64_t i = 0; i < lm.size(); ++i) v[static_cast<size_t>(i)] = lm.valid[static_cast<size_t>(i)] ? 1.0 : 0.0;
  return Tensor({lm.size()}, std::move(v));
}

Tensor landmark_depths(const scene::LandmarkSet& lm) {
  return Tensor({lm.size()}, std::vector<double>(lm.d_in.begin(), lm.d_in.end()));
}

Tensor extract_sparse_features(const Tensor& f_pe, const scene::LandmarkSet& lm, int stride) {
  check(f_pe.rank() == 3, "extract_sparse_features expects [H,W,C]");
  check(stride >= 1, "stride must be positive");
  const std::int64_t Hs = f_pe.dim(0), Ws = f_pe.dim(1), C = f_pe.dim(2);
  std::vector<std::int64_t> idx(static_cast<size_t>(lm.size()), 0);
  for (std::int64_t i = 0; i < lm.size(); ++i) {
    if (!lm.valid[static_cast<size_t>(i)]) continue;  // padded rows gather row 0, masked below
    const std::int64_t col = std::clamp<std::int64_t>(lm.uv[2 * static_cast<size_t>(i)] / stride, 0, Ws - 1);
    const std::int64_t row =
        std::clamp<std::int64_t>(lm.uv[2 * static_cast<size_t>(i) + 1] / stride, 0, Hs - 1);
    idx[static_cast<size_t>(i)] = row * Ws + col;
  }
  Tensor flat = reshape(f_pe, {Hs * Ws, C});
  return mask_rows(gather_rows(flat, idx), landmark_valid_mask(lm));
}

Tensor depth_encode(const scene::LandmarkSet& lm, double d_max) {
  check(d_max > 0.0, "d_max must be positive");
  const double denom = std::log1p(d_max);
  std::vector<double> v(static_cast<size_t>(lm.size()));
  for (std::int64_t i = 0; i < lm.size(); ++i)
    v[static_cast<size_t>(i)] = std::log1p(lm.d_in[static_cast<size_t>(i)]) / denom;
  return Tensor({lm.size(), 1}, std::move(v));
}

Tensor refine(const Tensor& f_s_depth, const Tensor& valid, const RefinementParams& params,
              int heads) {
  check(f_s_depth.rank() == 2, "refine expects [N,d_r]");
  check(heads >= 1, "refine needs at least one head");
  const std::int64_t dr = f_s_depth.dim(1);
  Tensor x = mask_rows(f_s_depth, valid);
  for (const auto& lp : params.layers) {
    Tensor h = layer_norm(x, lp.ln1_g, lp.ln1_b);
    Tensor q = matmul(h, lp.wq);
    Tensor k = matmul(h, lp.wk);
    Tensor v = matmul(h, lp.wv);
    std::vector<Tensor> head_outs;
    std::int64_t off = 0;
    const std::int64_t base = dr / heads, rem = dr % heads;
    for (int hd = 0; hd < heads; ++hd) {
      const std::int64_t width = base + (hd < rem ? 1 : 0);
      if (width == 0) continue;
      Tensor qh = slice_cols(q, off, off + width);
      Tensor kh = slice_cols(k, off, off + width);
      Tensor vh = slice_cols(v, off, off + width);
      off += width;
      Tensor scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(width)));
      Tensor attn = softmax_masked(scores, valid);  // padded columns get zero weight
      head_outs.push_back(matmul(attn, vh));
    }
    Tensor attn_out = matmul(head_outs.size() == 1 ? head_outs[0] : concat(head_outs, 1), lp.wo);
    x = add(x, attn_out);
    Tensor h2 = layer_norm(x, lp.ln2_g, lp.ln2_b);
    Tensor ff = matmul(relu(matmul(h2, lp.ff1)), lp.ff2);
    x = add(x, ff);
  }
  return mask_rows(x, valid);  // padded rows stay exactly zero
}

AttentionVolume attention_volume(const Tensor& f_d, const Tensor& f_s_refined, const Tensor& valid,
                                 const Tensor& w_q, const Tensor& w_k) {
  check(f_d.rank() == 2 && f_s_refined.rank() == 2, "attention_volume expects 2-D inputs");
  const std::int64_t dr = w_q.dim(0);
  check(f_s_refined.dim(1) == dr, "refined features width mismatch");
  check(f_d.dim(1) == dr - 1, "dense features must be one channel narrower than d_r");
  double n_valid = 0.0;
  for (double v : valid.data()) n_valid += v != 0.0 ? 1.0 : 0.0;
  check(n_valid >= 1.0, "attention_volume with zero valid landmarks");

  // dense rows get a zero in the depth slot so all projections share d_r
  Tensor f_d_aug = concat({f_d, Tensor::zeros({f_d.dim(0), 1})}, 1);
  Tensor q = matmul(f_s_refined, w_q);  // [N, C_a]
  Tensor k = matmul(f_d_aug, w_k);      // [HW, C_a]
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(w_q.dim(1)));
  Tensor logits = scale(matmul_nt(k, q), inv_sqrt);  // [HW, N]
  AttentionVolume av;
  av.a = softmax_masked(logits, valid);
  av.valid = valid;
  return av;
}

std::pair<Tensor, Tensor> interpolate(const AttentionVolume& av, const Tensor& d_in,
                                      const Tensor& f_s_refined, const Tensor& w_v,
                                      const Tensor& w_o) {
  const std::int64_t hw = av.a.dim(0), n = av.a.dim(1);
  check(d_in.size() == n, "interpolate: depth count mismatch");
  Tensor d_out = reshape(matmul(av.a, reshape(d_in, {n, 1})), {hw});
  Tensor v = matmul(f_s_refined, w_v);
  Tensor m = reshape(matmul(matmul(av.a, v), w_o), {hw});
  return {d_out, m};
}

Tensor fuse(const Tensor& f, const Tensor& d_out, const Tensor& m, const Tensor& fuse_w,
            const Tensor& fuse_b) {
  check(f.rank() == 3, "fuse expects [H,W,C] features");
  const std::int64_t H = f.dim(0), W = f.dim(1);
  Tensor d3 = reshape(d_out, {H, W, 1});
  Tensor m3 = reshape(m, {H, W, 1});
  Tensor cat = concat({f, d3, m3}, 2);
  return relu(conv2d(cat, fuse_w, fuse_b, 1, 1));
}

SparseFormerOutput sparseformer_forward(const Tensor& f, const scene::LandmarkSet& landmarks,
                                        int stride, const SparseFormerParams& params,
                                        const SparseFormerConfig& cfg) {
  check(f.rank() == 3 && f.dim(2) == cfg.channels,
        "sparseformer_forward: feature shape " + shape_str(f.shape()) + " does not match config");
  const std::int64_t H = f.dim(0), W = f.dim(1);

  SparseFormerOutput out;
  if (landmarks.count_valid() == 0) {
    out.f_fused = f;
    out.d_out = Tensor::zeros({H, W});
    out.confidence = Tensor::zeros({H, W});
    out.zero_landmarks = true;
    return out;
  }

  Tensor pe = positional_encoding(H, W, cfg.pos_bands);
  Tensor f_pe = concat({f, pe}, 2);
  Tensor f_s = extract_sparse_features(f_pe, landmarks, stride);
  Tensor d_enc = depth_encode(landmarks, cfg.d_max);
  Tensor f_sd = concat({f_s, d_enc}, 1);
  Tensor valid = landmark_valid_mask(landmarks);
  Tensor f_ref = refine(f_sd, valid, params.refinement, cfg.refine_heads);

  Tensor f_d = reshape(f_pe, {H * W, f_pe.dim(2)});
  AttentionVolume av = attention_volume(f_d, f_ref, valid, params.w_q, params.w_k);
  auto [d_out, m] = interpolate(av, landmark_depths(landmarks), f_ref, params.w_v, params.w_o);

  out.f_fused = fuse(f, d_out, m, params.fuse_w, params.fuse_b);
  out.d_out = reshape(d_out, {H, W});
  out.confidence = reshape(m, {H, W});
  out.attention = av.a;
  return out;
}

}  // namespace spf::sf
