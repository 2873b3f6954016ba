#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "spf/rng.hpp"
#include "spf/scene.hpp"
#include "spf/tensor.hpp"

namespace spf::sf {

// Block hyperparameters. With C decoder channels and P positional channels,
// the landmark-side feature width is d_r = C + P + 1 (the +1 is the encoded
// depth channel); dense pixels carry a zero in that slot so the q/k/v
// projections share one input width.
struct SparseFormerConfig {
  std::int64_t channels = 16;    // C, decoder feature channels at this scale
  int pos_bands = 6;             // F; P = 2 + 4F positional channels
  std::int64_t attn_width = 16;  // C_a, projected query/key/value width
  int refine_layers = 2;         // 0 disables the refinement transformer
  int refine_heads = 2;
  double d_max = 10.0;  // depth normalization for the encoded depth channel

  std::int64_t pos_channels() const { return 2 + 4 * static_cast<std::int64_t>(pos_bands); }
  std::int64_t feat_width() const { return channels + pos_channels() + 1; }  // d_r
};

struct RefinementLayerParams {
  Tensor wq, wk, wv, wo;      // [d_r, d_r]
  Tensor ff1, ff2;            // [d_r, 2 d_r], [2 d_r, d_r]
  Tensor ln1_g, ln1_b;        // pre-norm before attention
  Tensor ln2_g, ln2_b;        // pre-norm before the feed-forward
};

struct RefinementParams {
  std::vector<RefinementLayerParams> layers;
};

struct SparseFormerParams {
  Tensor w_q, w_k, w_v;  // [d_r, C_a]
  Tensor w_o;            // [C_a, 1]
  RefinementParams refinement;
  Tensor fuse_w, fuse_b;  // 1x1 conv (C+2) -> C

  template <class Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".wq", w_q);
    fn(prefix + ".wk", w_k);
    fn(prefix + ".wv", w_v);
    fn(prefix + ".wo", w_o);
    for (size_t l = 0; l < refinement.layers.size(); ++l) {
      auto& lp = refinement.layers[l];
      const std::string p = prefix + ".refine" + std::to_string(l);
      fn(p + ".wq", lp.wq);
      fn(p + ".wk", lp.wk);
      fn(p + ".wv", lp.wv);
      fn(p + ".wo", lp.wo);
      fn(p + ".ff1", lp.ff1);
      fn(p + ".ff2", lp.ff2);
      fn(p + ".ln1g", lp.ln1_g);
      fn(p + ".ln1b", lp.ln1_b);
      fn(p + ".ln2g", lp.ln2_g);
      fn(p + ".ln2b", lp.ln2_b);
    }
    fn(prefix + ".fusew", fuse_w);
    fn(prefix + ".fuseb", fuse_b);
  }
};

SparseFormerParams init_sparseformer(const SparseFormerConfig& cfg, Rng& rng);

// Channels: x_norm, y_norm in [-1,1], then sin/cos(2^j pi x), sin/cos(2^j pi y)
// for j = 0..F-1. Corners map to exactly +-1.
Tensor positional_encoding(std::int64_t H, std::int64_t W, int bands);

// Rows of f_pe at floor(uv / stride), clamped to the grid; padded landmarks
// yield zero rows.
Tensor extract_sparse_features(const Tensor& f_pe, const scene::LandmarkSet& landmarks,
                               int stride);

// Single channel log(1+d)/log(1+d_max); zero for padded entries.
Tensor depth_encode(const scene::LandmarkSet& landmarks, double d_max);

Tensor landmark_valid_mask(const scene::LandmarkSet& landmarks);
Tensor landmark_depths(const scene::LandmarkSet& landmarks);

// Pre-norm self-attention transformer over the depth-augmented landmark rows.
// Padded rows neither attend nor are attended to and are re-zeroed at the
// output. With refine_layers == 0 this is the identity on its input.
Tensor refine(const Tensor& f_s_depth, const Tensor& valid, const RefinementParams& params,
              int heads);

struct AttentionVolume {
  Tensor a;      // [HW, N]; rows sum to 1 over valid landmarks, others exact 0
  Tensor valid;  // [N]
};

// A = softmax over landmarks of (W_q f_s)(W_k f_d)^T / sqrt(C_a), stored
// transposed as [HW, N]. f_d gets a zero appended in the depth slot.
AttentionVolume attention_volume(const Tensor& f_d, const Tensor& f_s_refined, const Tensor& valid,
                                 const Tensor& w_q, const Tensor& w_k);

// d_out = A d_in (padded depths are zero and carry zero weight);
// m = (A (f_s W_v)) W_o.
std::pair<Tensor, Tensor> interpolate(const AttentionVolume& av, const Tensor& d_in,
                                      const Tensor& f_s_refined, const Tensor& w_v,
                                      const Tensor& w_o);

// relu(conv1x1(concat(f, d_out, m))) back to C channels.
Tensor fuse(const Tensor& f, const Tensor& d_out, const Tensor& m, const Tensor& fuse_w,
            const Tensor& fuse_b);

struct SparseFormerOutput {
  Tensor f_fused;    // [H,W,C]
  Tensor d_out;      // [H,W]
  Tensor confidence; // [H,W]
  Tensor attention;  // [HW,N] (undefined on the zero-landmark path)
  bool zero_landmarks = false;
};

// Full block: positional encoding, concat, extraction, refinement, attention,
// interpolation, fusion. With zero valid landmarks the features pass through
// unchanged, d_out is a zero map and the flag is set.
SparseFormerOutput sparseformer_forward(const Tensor& f, const scene::LandmarkSet& landmarks,
                                        int stride, const SparseFormerParams& params,
                                        const SparseFormerConfig& cfg);

}  // namespace spf::sf
