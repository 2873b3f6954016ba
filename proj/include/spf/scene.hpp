#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spf/tensor.hpp"

namespace spf::scene {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};
inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 normalize(Vec3 a);

struct SceneConfig {
  std::int64_t height = 48;
  std::int64_t width = 64;
  int n_planes = 3;
  int n_boxes = 2;
  double d_min = 0.5;
  double d_max = 10.0;
  double landmark_density = 0.001;
  double outlier_rate = 0.0;
  std::int64_t n_fixed = 48;
  double sampling_bias = 0.7;  // 0 = uniform, 1 = fully gradient-driven
};

// Fixed-size landmark list; entries beyond the valid count are padding with
// d_in = 0 and uv = (0,0). is_outlier is a generator-side label and is never
// shown to the model.
struct LandmarkSet {
  std::vector<std::int32_t> uv;  // (col,row) pairs, length 2*n
  std::vector<double> d_in;
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> is_outlier;

  std::int64_t size() const { return static_cast<std::int64_t>(d_in.size()); }
  std::int64_t count_valid() const;
};

struct Scene {
  Tensor image;     // [H,W,3] in [0,1]
  Tensor gt_depth;  // [H,W] meters
  Tensor gt_valid;  // [H,W] {0,1}
  LandmarkSet landmarks;
  std::uint64_t seed = 0;
};

// Scene geometry: rectangular plane patches and axis-aligned boxes in front of
// a full-frame background plane. The camera is pinhole with focal = W pixels
// and the principal point at the image center.
struct Surface {
  enum class Kind { Background, Card, Box };
  Kind kind = Kind::Background;
  Vec3 normal{0, 0, 1};  // plane kinds; oriented toward the camera (n·z < 0 ok)
  double offset = 0;     // plane equation n·X = offset
  Vec3 center{0, 0, 0};  // card center
  Vec3 axis_u{1, 0, 0}, axis_v{0, 1, 0};
  double half_u = 0, half_v = 0;
  Vec3 box_min{0, 0, 0}, box_max{0, 0, 0};
  Vec3 albedo{0.5, 0.5, 0.5};
  int id = 0;
};

struct RenderResult {
  Tensor image;
  Tensor depth;
  std::vector<int> surface_id;  // per pixel, -1 when no hit
  bool complete = true;         // every pixel hit a surface within (0, d_max]
};

// Ray direction through pixel (col,row): ((col+.5-W/2)/W, (row+.5-H/2)/W, 1);
// the returned depth is the ray parameter t, i.e. z-depth in meters.
RenderResult render(const std::vector<Surface>& surfaces, std::int64_t H, std::int64_t W,
                    double d_max);

Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed,
                     std::vector<int>* surface_ids = nullptr);

// Draws round(density*H*W) pixels with probability proportional to
// (1-bias) + bias * normalized image gradient magnitude, copies ground-truth
// depth, corrupts each with probability outlier_rate, and pads or randomly
// subsamples to n_fixed.
LandmarkSet sample_landmarks(const Tensor& gt_depth, const Tensor& image, const SceneConfig& cfg,
                             std::uint64_t seed);

// Landmark count / outlier-rate override used by evaluation sweeps; the result
// holds exactly min(count, H*W) entries with no extra padding.
LandmarkSet resample_landmarks(const Scene& scene, std::int64_t count, double outlier_rate,
                               double bias, double d_min, double d_max, std::uint64_t seed);

struct DatasetStats {
  double mean_density = 0;
  std::int64_t n_scenes = 0;
  std::int64_t n_landmarks = 0;
  std::vector<std::int64_t> landmark_depth_hist;  // 10 bins over (0, d_max]
  std::vector<std::int64_t> gt_depth_hist;
  double bin_width = 0;
};

DatasetStats dataset_stats(const std::vector<Scene>& scenes, double d_max);
std::string format_stats(const DatasetStats& s);

// ---- container files --------------------------------------------------------
// Scene file: little-endian, magic "SPFS", version u32, H,W,N u32, gt_depth
// f32[H*W], gt_valid u8[H*W], image f32[H*W*3], uv i32[N*2], d_in f32[N],
// valid u8[N], is_outlier u8[N].

void write_scene(const std::string& path, const Scene& scene);
Scene read_scene(const std::string& path);

// Manifest: key=value lines for the config followed by one scene filename per
// line (relative to the manifest's directory).
void write_manifest(const std::string& path, const SceneConfig& cfg,
                    const std::vector<std::string>& files);
struct Manifest {
  SceneConfig cfg;
  std::vector<std::string> files;  // resolved paths
};
Manifest read_manifest(const std::string& path);

}  // namespace spf::scene
