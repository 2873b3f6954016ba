#include "spf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spf/rng.hpp"

namespace spf::scene {

Vec3 normalize(Vec3 a) {
  const double n = std::sqrt(dot(a, a));
  check(n > 0.0, "normalize of zero vector");
  return {a.x / n, a.y / n, a.z / n};
}

namespace {

Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

float to_f32(double v) { return static_cast<float>(v); }

void validate_config(const SceneConfig& cfg) {
  check(cfg.height >= 4 && cfg.width >= 4, "scene size too small");
  check(cfg.d_min > 0.0 && cfg.d_min < cfg.d_max, "depth range must satisfy 0 < d_min < d_max");
  check(cfg.outlier_rate >= 0.0 && cfg.outlier_rate < 1.0, "outlier_rate must be in [0,1)");
  check(cfg.landmark_density * static_cast<double>(cfg.height * cfg.width) >= 1.0,
        "landmark_density*H*W must be at least 1");
  check(cfg.n_fixed >= 1, "n_fixed must be positive");
  check(cfg.sampling_bias >= 0.0 && cfg.sampling_bias <= 1.0, "sampling_bias must be in [0,1]");
}

struct Hit {
  double t = -1.0;
  Vec3 normal;
  int id = -1;
  const Surface* surf = nullptr;
};

bool intersect(const Surface& s, Vec3 dir, Hit* hit) {
  switch (s.kind) {
    case Surface::Kind::Background:
    case Surface::Kind::Card: {
      const double denom = dot(s.normal, dir);
      if (std::abs(denom) < 1e-12) return false;
      const double t = s.offset / denom;
      if (t <= 1e-9) return false;
      if (s.kind == Surface::Kind::Card) {
        const Vec3 p = t * dir - s.center;
        if (std::abs(dot(p, s.axis_u)) > s.half_u) return false;
        if (std::abs(dot(p, s.axis_v)) > s.half_v) return false;
      }
      hit->t = t;
      hit->normal = s.normal;
      return true;
    }
    case Surface::Kind::Box: {
      // slab test from the origin along dir
      double t0 = 0.0, t1 = 1e30;
      int enter_axis = -1;
      double enter_sign = 0.0;
      const double o[3] = {0, 0, 0};
      const double d[3] = {dir.x, dir.y, dir.z};
      const double lo[3] = {s.box_min.x, s.box_min.y, s.box_min.z};
      const double hi[3] = {s.box_max.x, s.box_max.y, s.box_max.z};
      for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-12) {
          if (o[a] < lo[a] || o[a] > hi[a]) return false;
          continue;
        }
        double ta = (lo[a] - o[a]) / d[a];
        double tb = (hi[a] - o[a]) / d[a];
        double sign = -1.0;
        if (ta > tb) {
          std::swap(ta, tb);
          sign = 1.0;
        }
        if (ta > t0) {
          t0 = ta;
          enter_axis = a;
          enter_sign = sign;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
      }
      if (t0 <= 1e-9 || enter_axis < 0) return false;
      hit->t = t0;
      Vec3 n{0, 0, 0};
      if (enter_axis == 0) n.x = enter_sign;
      if (enter_axis == 1) n.y = enter_sign;
      if (enter_axis == 2) n.z = enter_sign;
      hit->normal = n;
      return true;
    }
  }
  return false;
}

}  // namespace

RenderResult render(const std::vector<Surface>& surfaces, std::int64_t H, std::int64_t W,
                    double d_max) {
  check(!surfaces.empty(), "render with no surfaces");
  RenderResult out;
  std::vector<double> depth(static_cast<size_t>(H * W), 0.0);
  std::vector<double> image(static_cast<size_t>(H * W * 3), 0.0);
  out.surface_id.assign(static_cast<size_t>(H * W), -1);

  const double f = static_cast<double>(W);
  const Vec3 light = normalize({0.35, 0.45, -0.82});
  for (std::int64_t r = 0; r < H; ++r) {
    for (std::int64_t c = 0; c < W; ++c) {
      const Vec3 dir{(static_cast<double>(c) + 0.5 - static_cast<double>(W) / 2.0) / f,
                     (static_cast<double>(r) + 0.5 - static_cast<double>(H) / 2.0) / f, 1.0};
      Hit best;
      for (const Surface& s : surfaces) {
        Hit h;
        if (intersect(s, dir, &h) && (best.t < 0.0 || h.t < best.t)) {
          h.id = s.id;
          h.surf = &s;
          best = h;
        }
      }
      const std::int64_t p = r * W + c;
      if (best.t <= 0.0 || best.t > d_max) {
        out.complete = false;
        continue;
      }
      // depth = ray parameter; dir.z == 1 so this is z-depth in meters
      depth[static_cast<size_t>(p)] = best.t;
      out.surface_id[static_cast<size_t>(p)] = best.id;
      Vec3 n = best.normal;
      if (dot(n, dir) > 0.0) n = -1.0 * n;  // face the camera
      const double lambert = std::max(0.0, dot(n, light));
      const double intensity = 0.3 + 0.7 * lambert;
      const Vec3& alb = best.surf->albedo;
      image[static_cast<size_t>(3 * p + 0)] = std::clamp(alb.x * intensity, 0.0, 1.0);
      image[static_cast<size_t>(3 * p + 1)] = std::clamp(alb.y * intensity, 0.0, 1.0);
      image[static_cast<size_t>(3 * p + 2)] = std::clamp(alb.z * intensity, 0.0, 1.0);
    }
  }
  out.depth = Tensor({H, W}, std::move(depth));
  out.image = Tensor({H, W, 3}, std::move(image));
  return out;
}

namespace {

Vec3 random_albedo(Rng& rng) {
  return {rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95), rng.uniform(0.2, 0.95)};
}

std::vector<Surface> random_surfaces(const SceneConfig& cfg, Rng& rng) {
  std::vector<Surface> surfaces;
  int next_id = 0;

  Surface bg;
  bg.kind = Surface::Kind::Background;
  bg.normal = {0, 0, 1};
  bg.offset = rng.uniform(0.72, 0.95) * cfg.d_max;
  bg.albedo = random_albedo(rng);
  bg.id = next_id++;
  surfaces.push_back(bg);
  const double back_z = bg.offset;

  const int n_cards = cfg.n_planes >= 1 ? static_cast<int>(rng.uniform_int(1, cfg.n_planes)) : 0;
  for (int i = 0; i < n_cards; ++i) {
    Surface card;
    card.kind = Surface::Kind::Card;
    const double z0 = rng.uniform(cfg.d_min + 0.2 * (back_z - cfg.d_min),
                                  back_z - 0.08 * (back_z - cfg.d_min));
    const double half_w_view = z0 / 2.0;  // view half-width at depth z0 (focal = W)
    const double half_h_view = half_w_view * static_cast<double>(cfg.height) /
                               static_cast<double>(cfg.width);
    card.center = {rng.uniform(-0.6, 0.6) * half_w_view, rng.uniform(-0.6, 0.6) * half_h_view, z0};
    if (rng.bernoulli(0.5)) {
      card.normal = {0, 0, 1};
    } else {
      card.normal = normalize({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), 1.0});
    }
    card.offset = dot(card.normal, card.center);
    Vec3 ref = std::abs(card.normal.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    card.axis_u = normalize(cross(card.normal, ref));
    card.axis_v = normalize(cross(card.normal, card.axis_u));
    card.half_u = rng.uniform(0.3, 0.8) * half_w_view;
    card.half_v = rng.uniform(0.3, 0.8) * half_h_view;
    card.albedo = random_albedo(rng);
    card.id = next_id++;
    surfaces.push_back(card);
  }

  for (int i = 0; i < cfg.n_boxes; ++i) {
    Surface box;
    box.kind = Surface::Kind::Box;
    const double z0 = rng.uniform(cfg.d_min + 0.25 * (back_z - cfg.d_min),
                                  back_z - 0.15 * (back_z - cfg.d_min));
    const double half_w_view = z0 / 2.0;
    const double half_h_view = half_w_view * static_cast<double>(cfg.height) /
                               static_cast<double>(cfg.width);
    const double cx = rng.uniform(-0.55, 0.55) * half_w_view;
    const double cy = rng.uniform(-0.55, 0.55) * half_h_view;
    const double hx = rng.uniform(0.15, 0.4) * half_w_view;
    const double hy = rng.uniform(0.15, 0.4) * half_h_view;
    const double hz = std::min(rng.uniform(0.1, 0.3) * z0, (z0 - cfg.d_min) * 0.45);
    box.box_min = {cx - hx, cy - hy, z0 - hz};
    box.box_max = {cx + hx, cy + hy, z0 + hz};
    box.albedo = random_albedo(rng);
    box.id = next_id++;
    surfaces.push_back(box);
  }
  return surfaces;
}

void quantize_f32(Tensor& t) {
  auto v = t.raw();
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace

Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed, std::vector<int>* surface_ids) {
  validate_config(cfg);
  Rng rng(seed, /*stream=*/1);
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto surfaces = random_surfaces(cfg, rng);
    RenderResult res = render(surfaces, cfg.height, cfg.width, cfg.d_max);
    if (!res.complete) continue;
    Scene scene;
    quantize_f32(res.depth);  // match the on-disk f32 representation exactly
    quantize_f32(res.image);
    scene.gt_depth = res.depth;
    scene.image = res.image;
    scene.gt_valid = Tensor::full({cfg.height, cfg.width}, 1.0);
    scene.landmarks = sample_landmarks(scene.gt_depth, scene.image, cfg, seed);
    scene.seed = seed;
    if (surface_ids) *surface_ids = std::move(res.surface_id);
    return scene;
  }
  fail("generate_scene: degenerate geometry after 100 attempts");
}

namespace {

// Luminance gradient magnitude, normalized so the largest value is 1.
std::vector<double> gradient_weight(const Tensor& image) {
  const std::int64_t H = image.dim(0), W = image.dim(1);
  std::vector<double> lum(static_cast<size_t>(H * W));
  const double* im = image.data().data();
  for (std::int64_t p = 0; p < H * W; ++p)
    lum[static_cast<size_t>(p)] = (im[3 * p] + im[3 * p + 1] + im[3 * p + 2]) / 3.0;
  std::vector<double> g(static_cast<size_t>(H * W), 0.0);
  double gmax = 0.0;
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t c = 0; c < W; ++c) {
      const auto at = [&](std::int64_t rr, std::int64_t cc) {
        rr = std::clamp<std::int64_t>(rr, 0, H - 1);
        cc = std::clamp<std::int64_t>(cc, 0, W - 1);
        return lum[static_cast<size_t>(rr * W + cc)];
      };
      const double gx = 0.5 * (at(r, c + 1) - at(r, c - 1));
      const double gy = 0.5 * (at(r + 1, c) - at(r - 1, c));
      const double m = std::sqrt(gx * gx + gy * gy);
      g[static_cast<size_t>(r * W + c)] = m;
      gmax = std::max(gmax, m);
    }
  if (gmax > 0.0)
    for (auto& v : g) v /= gmax;
  return g;
}

// Weighted draw of k pixels without replacement (exponential-keys method);
// ties and zero weights resolve by pixel index, so the draw is deterministic.
std::vector<std::int64_t> weighted_draw(const std::vector<double>& weights, std::int64_t k,
                                        Rng& rng) {
  const std::int64_t n = static_cast<std::int64_t>(weights.size());
  struct Key {
    double logkey;
    std::int64_t idx;
  };
  std::vector<Key> keys(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double u = rng.uniform();
    if (u <= 0.0) u = 0x1.0p-53;
    const double w = weights[static_cast<size_t>(i)];
    keys[static_cast<size_t>(i)] = {w > 0.0 ? std::log(u) / w : -1e300, i};
  }
  auto better = [](const Key& a, const Key& b) {
    if (a.logkey != b.logkey) return a.logkey > b.logkey;
    return a.idx < b.idx;
  };
  std::nth_element(keys.begin(), keys.begin() + k, keys.end(), better);
  std::vector<std::int64_t> out;
  out.reserve(static_cast<size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) out.push_back(keys[static_cast<size_t>(i)].idx);
  std::sort(out.begin(), out.end());
  return out;
}

LandmarkSet build_landmarks(const Tensor& gt_depth, const Tensor& image, std::int64_t k,
                            std::int64_t n_fixed, double bias, double outlier_rate, double d_min,
                            double d_max, Rng& rng) {
  const std::int64_t H = gt_depth.dim(0), W = gt_depth.dim(1);
  check(k <= H * W, "requested more landmarks than pixels");
  check(k >= 1, "requested zero landmarks");

  std::vector<double> weights = gradient_weight(image);
  for (auto& w : weights) w = (1.0 - bias) + bias * w;
  std::vector<std::int64_t> picked = weighted_draw(weights, k, rng);

  // outlier corruption, in pixel order
  std::vector<double> depths(picked.size());
  std::vector<std::uint8_t> outlier(picked.size(), 0);
  for (size_t i = 0; i < picked.size(); ++i) {
    depths[i] = gt_depth.at(picked[i]);
    if (outlier_rate > 0.0 && rng.bernoulli(outlier_rate)) {
      // f32 so the value survives the container format exactly
      depths[i] = static_cast<double>(static_cast<float>(rng.uniform(d_min, d_max)));
      outlier[i] = 1;
    }
  }

  // random subselection when the scene has more points than the fixed size
  if (k > n_fixed) {
    std::vector<std::int64_t> order(picked.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    for (std::int64_t i = 0; i < n_fixed; ++i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(rng.uniform_int(i, k - 1))]);
    order.resize(static_cast<size_t>(n_fixed));
    std::sort(order.begin(), order.end());
    std::vector<std::int64_t> p2;
    std::vector<double> d2;
    std::vector<std::uint8_t> o2;
    for (auto i : order) {
      p2.push_back(picked[static_cast<size_t>(i)]);
      d2.push_back(depths[static_cast<size_t>(i)]);
      o2.push_back(outlier[static_cast<size_t>(i)]);
    }
    picked = std::move(p2);
    depths = std::move(d2);
    outlier = std::move(o2);
  }

  LandmarkSet lm;
  const std::int64_t n_out = std::max(n_fixed, static_cast<std::int64_t>(picked.size()));
  lm.uv.assign(static_cast<size_t>(2 * n_out), 0);
  lm.d_in.assign(static_cast<size_t>(n_out), 0.0);
  lm.valid.assign(static_cast<size_t>(n_out), 0);
  lm.is_outlier.assign(static_cast<size_t>(n_out), 0);
  for (size_t i = 0; i < picked.size(); ++i) {
    lm.uv[2 * i] = static_cast<std::int32_t>(picked[i] % W);      // column
    lm.uv[2 * i + 1] = static_cast<std::int32_t>(picked[i] / W);  // row
    lm.d_in[i] = depths[i];
    lm.valid[i] = 1;
    lm.is_outlier[i] = outlier[i];
  }
  return lm;
}

}  // namespace

std::int64_t LandmarkSet::count_valid() const {
  std::int64_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

LandmarkSet sample_landmarks(const Tensor& gt_depth, const Tensor& image, const SceneConfig& cfg,
                             std::uint64_t seed) {
  validate_config(cfg);
  Rng rng(seed, /*stream=*/2);
  const std::int64_t k = std::llround(cfg.landmark_density *
                                      static_cast<double>(cfg.height * cfg.width));
  return build_landmarks(gt_depth, image, k, cfg.n_fixed, cfg.sampling_bias, cfg.outlier_rate,
                         cfg.d_min, cfg.d_max, rng);
}

LandmarkSet resample_landmarks(const Scene& scene, std::int64_t count, double outlier_rate,
                               double bias, double d_min, double d_max, std::uint64_t seed) {
  Rng rng(seed, /*stream=*/3);
  const std::int64_t hw = scene.gt_depth.size();
  const std::int64_t k = std::min(count, hw);
  return build_landmarks(scene.gt_depth, scene.image, k, k, bias, outlier_rate, d_min, d_max, rng);
}

DatasetStats dataset_stats(const std::vector<Scene>& scenes, double d_max) {
  check(!scenes.empty(), "dataset_stats of empty scene list");
  DatasetStats s;
  s.landmark_depth_hist.assign(10, 0);
  s.gt_depth_hist.assign(10, 0);
  s.bin_width = d_max / 10.0;
  double density_sum = 0.0;
  for (const Scene& sc : scenes) {
    const std::int64_t hw = sc.gt_depth.size();
    const std::int64_t nv = sc.landmarks.count_valid();
    density_sum += static_cast<double>(nv) / static_cast<double>(hw);
    s.n_landmarks += nv;
    for (std::int64_t i = 0; i < sc.landmarks.size(); ++i) {
      if (!sc.landmarks.valid[static_cast<size_t>(i)]) continue;
      const auto bin = std::min<std::int64_t>(
          9, static_cast<std::int64_t>(sc.landmarks.d_in[static_cast<size_t>(i)] / s.bin_width));
      ++s.landmark_depth_hist[static_cast<size_t>(bin)];
    }
    for (std::int64_t p = 0; p < hw; ++p) {
      if (sc.gt_valid.at(p) == 0.0) continue;
      const auto bin =
          std::min<std::int64_t>(9, static_cast<std::int64_t>(sc.gt_depth.at(p) / s.bin_width));
      ++s.gt_depth_hist[static_cast<size_t>(bin)];
    }
  }
  s.n_scenes = static_cast<std::int64_t>(scenes.size());
  s.mean_density = density_sum / static_cast<double>(s.n_scenes);
  return s;
}

std::string format_stats(const DatasetStats& s) {
  std::ostringstream os;
  os << "scenes=" << s.n_scenes << " landmarks=" << s.n_landmarks
     << " mean_density=" << s.mean_density << "\n";
  os << "depth histogram (bin: landmarks / gt pixels)\n";
  for (size_t b = 0; b < s.landmark_depth_hist.size(); ++b) {
    os << "  [" << static_cast<double>(b) * s.bin_width << ", "
       << static_cast<double>(b + 1) * s.bin_width << "): " << s.landmark_depth_hist[b] << " / "
       << s.gt_depth_hist[b] << "\n";
  }
  return os.str();
}

// ---- container files ---------------------------------------------------------

namespace {

template <class T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_scene(const std::string& path, const Scene& scene) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open for writing: " + path);
  f.write("SPFS", 4);
  write_pod<std::uint32_t>(f, 1);  // version
  const auto H = static_cast<std::uint32_t>(scene.gt_depth.dim(0));
  const auto W = static_cast<std::uint32_t>(scene.gt_depth.dim(1));
  const auto N = static_cast<std::uint32_t>(scene.landmarks.size());
  write_pod(f, H);
  write_pod(f, W);
  write_pod(f, N);
  for (double v : scene.gt_depth.data()) write_pod(f, to_f32(v));
  for (double v : scene.gt_valid.data()) write_pod<std::uint8_t>(f, v != 0.0 ? 1 : 0);
  for (double v : scene.image.data()) write_pod(f, to_f32(v));
  f.write(reinterpret_cast<const char*>(scene.landmarks.uv.data()),
          static_cast<std::streamsize>(scene.landmarks.uv.size() * sizeof(std::int32_t)));
  for (double v : scene.landmarks.d_in) write_pod(f, to_f32(v));
  f.write(reinterpret_cast<const char*>(scene.landmarks.valid.data()),
          static_cast<std::streamsize>(scene.landmarks.valid.size()));
  f.write(reinterpret_cast<const char*>(scene.landmarks.is_outlier.data()),
          static_cast<std::streamsize>(scene.landmarks.is_outlier.size()));
  check(f.good(), "write failed: " + path);
}

Scene read_scene(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open scene file: " + path);
  char magic[4];
  f.read(magic, 4);
  check(f.good() && std::memcmp(magic, "SPFS", 4) == 0, "bad scene magic in " + path);
  const auto version = read_pod<std::uint32_t>(f);
  check(version == 1, "unsupported scene version " + std::to_string(version));
  const auto H = static_cast<std::int64_t>(read_pod<std::uint32_t>(f));
  const auto W = static_cast<std::int64_t>(read_pod<std::uint32_t>(f));
  const auto N = static_cast<std::int64_t>(read_pod<std::uint32_t>(f));

  Scene s;
  std::vector<double> depth(static_cast<size_t>(H * W));
  for (auto& v : depth) v = static_cast<double>(read_pod<float>(f));
  std::vector<double> valid(static_cast<size_t>(H * W));
  for (auto& v : valid) v = read_pod<std::uint8_t>(f) != 0 ? 1.0 : 0.0;
  std::vector<double> image(static_cast<size_t>(H * W * 3));
  for (auto& v : image) v = static_cast<double>(read_pod<float>(f));
  s.gt_depth = Tensor({H, W}, std::move(depth));
  s.gt_valid = Tensor({H, W}, std::move(valid));
  s.image = Tensor({H, W, 3}, std::move(image));

  s.landmarks.uv.resize(static_cast<size_t>(2 * N));
  f.read(reinterpret_cast<char*>(s.landmarks.uv.data()),
         static_cast<std::streamsize>(s.landmarks.uv.size() * sizeof(std::int32_t)));
  s.landmarks.d_in.resize(static_cast<size_t>(N));
  for (auto& v : s.landmarks.d_in) v = static_cast<double>(read_pod<float>(f));
  s.landmarks.valid.resize(static_cast<size_t>(N));
  f.read(reinterpret_cast<char*>(s.landmarks.valid.data()), N);
  s.landmarks.is_outlier.resize(static_cast<size_t>(N));
  f.read(reinterpret_cast<char*>(s.landmarks.is_outlier.data()), N);
  check(f.good(), "truncated scene file: " + path);
  return s;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void write_manifest(const std::string& path, const SceneConfig& cfg,
                    const std::vector<std::string>& files) {
  std::ofstream f(path);
  check(f.good(), "cannot open for writing: " + path);
  f << "height=" << cfg.height << "\n";
  f << "width=" << cfg.width << "\n";
  f << "n_planes=" << cfg.n_planes << "\n";
  f << "n_boxes=" << cfg.n_boxes << "\n";
  f << "d_min=" << fmt_double(cfg.d_min) << "\n";
  f << "d_max=" << fmt_double(cfg.d_max) << "\n";
  f << "landmark_density=" << fmt_double(cfg.landmark_density) << "\n";
  f << "outlier_rate=" << fmt_double(cfg.outlier_rate) << "\n";
  f << "n_fixed=" << cfg.n_fixed << "\n";
  f << "sampling_bias=" << fmt_double(cfg.sampling_bias) << "\n";
  for (const auto& name : files) f << name << "\n";
  check(f.good(), "write failed: " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open manifest: " + path);
  Manifest m;
  const auto dir = std::filesystem::path(path).parent_path();
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      m.files.push_back((dir / line).string());
      continue;
    }
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "height") m.cfg.height = std::stoll(val);
    else if (key == "width") m.cfg.width = std::stoll(val);
    else if (key == "n_planes") m.cfg.n_planes = std::stoi(val);
    else if (key == "n_boxes") m.cfg.n_boxes = std::stoi(val);
    else if (key == "d_min") m.cfg.d_min = std::stod(val);
    else if (key == "d_max") m.cfg.d_max = std::stod(val);
    else if (key == "landmark_density") m.cfg.landmark_density = std::stod(val);
    else if (key == "outlier_rate") m.cfg.outlier_rate = std::stod(val);
    else if (key == "n_fixed") m.cfg.n_fixed = std::stoll(val);
    else if (key == "sampling_bias") m.cfg.sampling_bias = std::stod(val);
    else fail("unknown manifest key: " + key);
  }
  check(!m.files.empty(), "manifest lists no scene files: " + path);
  return m;
}

}  // namespace spf::scene
