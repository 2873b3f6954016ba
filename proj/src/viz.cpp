#include "spf/viz.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace spf::viz {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& gray) {
  check(gray.rank() == 2, "write_pgm expects [H,W]");
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open for writing: " + path);
  f << "P5\n" << gray.dim(1) << ' ' << gray.dim(0) << "\n255\n";
  for (double v : gray.data()) f.put(static_cast<char>(to_byte(v)));
  check(f.good(), "write failed: " + path);
}

void write_ppm(const std::string& path, const Tensor& rgb) {
  check(rgb.rank() == 3 && rgb.dim(2) == 3, "write_ppm expects [H,W,3]");
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open for writing: " + path);
  f << "P6\n" << rgb.dim(1) << ' ' << rgb.dim(0) << "\n255\n";
  for (double v : rgb.data()) f.put(static_cast<char>(to_byte(v)));
  check(f.good(), "write failed: " + path);
}

std::array<double, 3> landmark_color(std::int64_t index) {
  // golden-ratio hue walk, fixed saturation/value
  const double h = std::fmod(static_cast<double>(index) * 0.61803398874989485, 1.0) * 6.0;
  const double s = 0.85, v = 0.95;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

AttentionMaps attention_maps(const Tensor& attention, const scene::LandmarkSet& landmarks,
                             std::int64_t H, std::int64_t W, const Tensor& image) {
  check(attention.rank() == 2 && attention.dim(0) == H * W, "attention shape mismatch");
  const std::int64_t n = attention.dim(1);
  check(n == landmarks.size(), "attention landmark count mismatch");
  std::int64_t n_valid = 0;
  for (std::int64_t i = 0; i < n; ++i) n_valid += landmarks.valid[static_cast<size_t>(i)] != 0;
  check(n_valid >= 1, "attention_maps with zero valid landmarks");

  AttentionMaps maps;
  std::vector<double> mx(static_cast<size_t>(H * W), 0.0);
  std::vector<double> ent(static_cast<size_t>(H * W), 0.0);
  maps.argmax.assign(static_cast<size_t>(H * W), 0);
  std::vector<double> argb(static_cast<size_t>(H * W * 3), 0.0);
  const double norm = n_valid > 1 ? 1.0 / std::log(static_cast<double>(n_valid)) : 0.0;
  for (std::int64_t p = 0; p < H * W; ++p) {
    double best = -1.0;
    std::int64_t best_i = 0;
    double h = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      if (!landmarks.valid[static_cast<size_t>(i)]) continue;
      const double a = attention.at(p * n + i);
      if (a > best) {
        best = a;
        best_i = i;
      }
      if (a > 0.0) h -= a * std::log(a);
    }
    mx[static_cast<size_t>(p)] = best;
    ent[static_cast<size_t>(p)] = h * norm;
    maps.argmax[static_cast<size_t>(p)] = best_i;
    const auto color = landmark_color(best_i);
    argb[static_cast<size_t>(3 * p + 0)] = color[0];
    argb[static_cast<size_t>(3 * p + 1)] = color[1];
    argb[static_cast<size_t>(3 * p + 2)] = color[2];
  }
  maps.max_attention = Tensor({H, W}, std::move(mx));
  maps.entropy = Tensor({H, W}, std::move(ent));
  maps.argmax_rgb = Tensor({H, W, 3}, std::move(argb));

  // overlay landmark dots on the (full-resolution) image
  const std::int64_t ih = image.dim(0), iw = image.dim(1);
  std::vector<double> dots(image.data().begin(), image.data().end());
  for (std::int64_t i = 0; i < n; ++i) {
    if (!landmarks.valid[static_cast<size_t>(i)]) continue;
    const auto color = landmark_color(i);
    const std::int64_t col = landmarks.uv[2 * static_cast<size_t>(i)];
    const std::int64_t row = landmarks.uv[2 * static_cast<size_t>(i) + 1];
    for (std::int64_t dr = -1; dr <= 1; ++dr)
      for (std::int64_t dc = -1; dc <= 1; ++dc) {
        const std::int64_t r = row + dr, c = col + dc;
        if (r < 0 || r >= ih || c < 0 || c >= iw) continue;
        dots[static_cast<size_t>((r * iw + c) * 3 + 0)] = color[0];
        dots[static_cast<size_t>((r * iw + c) * 3 + 1)] = color[1];
        dots[static_cast<size_t>((r * iw + c) * 3 + 2)] = color[2];
      }
  }
  maps.image_dots = Tensor({ih, iw, 3}, std::move(dots));
  return maps;
}

void write_viz_outputs(const std::string& out_dir, const AttentionMaps& maps,
                       const Tensor& pred_depth, const Tensor& gt_depth, double d_max) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto at = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  write_pgm(at("attention_max.pgm"), maps.max_attention);
  write_pgm(at("attention_entropy.pgm"), maps.entropy);
  write_ppm(at("attention_argmax.ppm"), maps.argmax_rgb);
  write_ppm(at("image_landmarks.ppm"), maps.image_dots);
  auto norm_depth = [&](const Tensor& d) {
    std::vector<double> v(d.data().begin(), d.data().end());
    for (auto& x : v) x = std::clamp(x / d_max, 0.0, 1.0);
    return Tensor(d.shape(), std::move(v));
  };
  write_pgm(at("depth_pred.pgm"), norm_depth(pred_depth));
  write_pgm(at("depth_gt.pgm"), norm_depth(gt_depth));
}

}  // namespace spf::viz
