#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace spf::bench {

struct BenchRow {
  std::int64_t height = 0, width = 0, n_landmarks = 0;
  double median_ms = 0;
  std::int64_t peak_bytes = 0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  // log-log slope of time vs pixel count, per landmark count (needs >= 2 sizes)
  std::vector<std::pair<std::int64_t, double>> exponents;
};

// Times the attention_volume + interpolate forward path in isolation (no
// encoder, no tape) over square feature maps.
BenchResult run(const std::vector<std::int64_t>& heights,
                const std::vector<std::int64_t>& n_landmarks, int repeats, std::uint64_t seed);

std::string to_csv(const BenchResult& r);

}  // namespace spf::bench
