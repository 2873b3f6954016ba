#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "spf/scene.hpp"
#include "spf/sparseformer.hpp"
#include "spf/tensor.hpp"

namespace spf::net {

// Toy encoder-decoder with one SparseFormer per decoder stage. Decoder stage s
// runs at stride 2^(4-s-... ) i.e. strides 8,4,2,1 in decoder order; skip
// connections are plain additions, which ties the first three decoder widths
// to the encoder widths.
struct ModelConfig {
  std::array<std::int64_t, 4> enc_channels{16, 32, 64, 128};
  std::array<std::int64_t, 4> dec_channels{64, 32, 16, 16};
  std::int64_t attn_width = 16;
  int pos_bands = 6;
  int refine_layers = 2;  // 0 = refinement ablated to identity
  int refine_heads = 2;
  double d_max = 10.0;

  sf::SparseFormerConfig sf_config(int stage) const;
  void validate() const;
};

struct ModelParams {
  struct Conv {
    Tensor w, b;
  };
  std::array<Conv, 4> enc;
  std::array<Conv, 4> dec;
  std::array<sf::SparseFormerParams, 4> sformers;
  Conv head;

  // Stable visit order; defines checkpoint layout and optimizer ordering.
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  std::int64_t param_count();
  ModelParams watched(Tape& tape);
};

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

struct MultiScaleOutput {
  Tensor final_depth;                  // [H,W], positive
  std::vector<Tensor> d_outs;          // decoder order: strides 8,4,2,1
  std::vector<Tensor> confidences;     // same order
  std::vector<Tensor> attentions;      // [HW,N] each; undefined when flagged
  std::vector<bool> zero_landmarks;    // per stage flag
};

MultiScaleOutput forward(const Tensor& image, const scene::LandmarkSet& landmarks,
                         ModelParams& params, const ModelConfig& cfg);

// Validity-masked average pooling of the ground truth down to 1/factor; a
// coarse pixel is valid when any contributing fine pixel is.
std::pair<Tensor, Tensor> downsample_gt(const Tensor& gt, const Tensor& valid, int factor);

// Multi-scale supervision: w=1.0 on the final prediction, then
// (0.5, 0.25, 0.15, 0.10) on the SparseFormer maps ordered fine to coarse.
// Stages flagged zero-landmark contribute nothing.
Tensor loss(const MultiScaleOutput& out, const Tensor& gt_depth, const Tensor& gt_valid);

// ---- checkpoint container -----------------------------------------------------
// "SPFC", version u32, key=value strings, then named f32 tensors
// (u32 name length, name, u32 ndim, u32 dims..., data), little-endian. Tensors
// beyond the model parameters (e.g. optimizer moments) ride along by name.

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const std::map<std::string, std::string>& extra, ModelParams& params,
                     const std::map<std::string, Tensor>& extra_tensors = {});

struct Checkpoint {
  ModelConfig cfg;
  std::map<std::string, std::string> extra;
  ModelParams params;
  std::map<std::string, Tensor> extra_tensors;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace spf::net
