#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spf/scene.hpp"
#include "spf/tensor.hpp"

namespace spf::viz {

// Binary P5 / P6 images, 8-bit, values clamped from [0,1].
void write_pgm(const std::string& path, const Tensor& gray);
void write_ppm(const std::string& path, const Tensor& rgb);

// Fixed palette keyed by landmark index.
std::array<double, 3> landmark_color(std::int64_t index);

struct AttentionMaps {
  Tensor max_attention;       // [H,W], per-pixel max over valid landmarks
  Tensor entropy;             // [H,W], normalized by log(#valid); 0 when N=1
  std::vector<std::int64_t> argmax;  // per pixel, index into the landmark list
  Tensor argmax_rgb;          // [H,W,3] palette-coded
  Tensor image_dots;          // input image with landmark dots in the same colors
};

// attention: [H*W, N] row-stochastic over the valid set.
AttentionMaps attention_maps(const Tensor& attention, const scene::LandmarkSet& landmarks,
                             std::int64_t H, std::int64_t W, const Tensor& image);

// Writes the Fig-style panel: attention max / entropy / argmax, the image with
// landmark dots, and predicted + ground-truth depth in d_max-normalized gray.
void write_viz_outputs(const std::string& out_dir, const AttentionMaps& maps,
                       const Tensor& pred_depth, const Tensor& gt_depth, double d_max);

}  // namespace spf::viz
