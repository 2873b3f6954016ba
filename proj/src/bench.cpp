#include "spf/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "spf/rng.hpp"
#include "spf/sparseformer.hpp"
#include "spf/tensor.hpp"

namespace spf::bench {

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

BenchResult run(const std::vector<std::int64_t>& heights,
                const std::vector<std::int64_t>& n_landmarks, int repeats, std::uint64_t seed) {
  check(!heights.empty() && !n_landmarks.empty(), "bench: empty size list");
  check(repeats >= 1, "bench: repeats must be positive");
  // representative widths of the finest decoder stage
  const std::int64_t dr = 16 + 26 + 1;
  const std::int64_t ca = 16;

  BenchResult result;
  Rng rng(seed, /*stream=*/51);
  for (std::int64_t n : n_landmarks) {
    struct Config {
      std::int64_t h;
      Tensor f_d, f_s, w_q, w_k, w_v, w_o, valid, d_in;
      std::int64_t peak = 0;
      std::vector<double> times;
    };
    std::vector<Config> configs;
    for (std::int64_t h : heights) {
      Config c;
      c.h = h;
      c.f_d = random_tensor(rng, {h * h, dr - 1});
      c.f_s = random_tensor(rng, {n, dr});
      c.w_q = random_tensor(rng, {dr, ca});
      c.w_k = random_tensor(rng, {dr, ca});
      c.w_v = random_tensor(rng, {dr, ca});
      c.w_o = random_tensor(rng, {ca, 1});
      c.valid = Tensor::full({n}, 1.0);
      c.d_in = random_tensor(rng, {n});
      auto dv = c.d_in.raw();
      for (auto& x : dv) x = std::abs(x) + 0.5;
      configs.push_back(std::move(c));
    }
    auto once = [](Config& c) {
      auto av = sf::attention_volume(c.f_d, c.f_s, c.valid, c.w_q, c.w_k);
      auto [d_out, m] = sf::interpolate(av, c.d_in, c.f_s, c.w_v, c.w_o);
      return d_out.at(0) + m.at(0);
    };
    volatile double sink = 0.0;
    for (auto& c : configs) {
      const std::int64_t live_before = AllocStats::live_bytes();
      AllocStats::reset_peak();
      sink = once(c);  // warm-up pass, also records peak allocation
      c.peak = AllocStats::peak_bytes() - live_before;
    }
    // interleave the sizes so slow clock drift biases every size equally
    for (int r = 0; r < repeats; ++r) {
      for (auto& c : configs) {
        const auto t0 = std::chrono::steady_clock::now();
        sink = once(c);
        const auto t1 = std::chrono::steady_clock::now();
        c.times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
    }
    (void)sink;
    for (auto& c : configs) {
      std::sort(c.times.begin(), c.times.end());
      result.rows.push_back(BenchRow{c.h, c.h, n, c.times[c.times.size() / 2], c.peak});
    }
    if (heights.size() >= 2) {
      // least-squares slope of log(time) vs log(pixels)
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      double cnt = 0;
      for (const auto& row : result.rows) {
        if (row.n_landmarks != n) continue;
        const double x = std::log(static_cast<double>(row.height * row.width));
        const double y = std::log(row.median_ms);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        cnt += 1.0;
      }
      const double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
      result.exponents.emplace_back(n, slope);
    }
  }
  return result;
}

std::string to_csv(const BenchResult& r) {
  std::ostringstream os;
  os << "height,width,n_landmarks,median_ms,peak_bytes\n";
  for (const auto& row : r.rows)
    os << row.height << ',' << row.width << ',' << row.n_landmarks << ',' << row.median_ms << ','
       << row.peak_bytes << '\n';
  for (const auto& [n, e] : r.exponents)
    os << "# fitted exponent at N=" << n << ": " << e << '\n';
  return os.str();
}

}  // namespace spf::bench
