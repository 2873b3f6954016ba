#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spf/depthnet.hpp"
#include "spf/scene.hpp"
#include "spf/tensor.hpp"

namespace spf::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_factor = 0.2;       // "decayed by 80%"
  std::int64_t decay_every = 7000; // iterations per decay step
};

// Bias-corrected Adam over the model's named parameters. step() is exact f64;
// the training loop separately rounds parameters and moments to f32 after each
// step so checkpoints reload to bit-identical state.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  double lr_at(std::int64_t iter) const;
  std::int64_t steps_done() const { return steps_; }
  void set_steps_done(std::int64_t s) { steps_ = s; }

  void step(net::ModelParams& params, const std::map<std::string, Tensor>& grads);
  void quantize_state_f32();

  std::map<std::string, Tensor> state_tensors() const;  // opt.m.* / opt.v.*
  void load_state_tensors(const std::map<std::string, Tensor>& tensors);

  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct Metrics {
  double rel = 0, rmse = 0, a1 = 0, a2 = 0, a3 = 0;
  std::int64_t n_pixels = 0;
};

// REL, RMSE and threshold accuracies at 1.25, 1.25^2, 1.25^3 over the valid
// set; requires positive depths there.
Metrics compute_metrics(const Tensor& pred, const Tensor& gt, const Tensor& valid);

// Pixel-weighted pooling across scenes.
class MetricsAccumulator {
 public:
  void add(const Tensor& pred, const Tensor& gt, const Tensor& valid);
  Metrics finalize() const;

 private:
  double sum_rel_ = 0, sum_sq_ = 0;
  std::int64_t n_ = 0, a1_ = 0, a2_ = 0, a3_ = 0;
};

struct TrainConfig {
  std::string manifest;
  std::string out_dir;
  std::uint64_t seed = 1;
  std::int64_t iterations = 20000;
  std::int64_t batch = 8;
  std::int64_t val_every = 500;
  std::int64_t ckpt_every = 5000;
  std::int64_t log_every = 100;
  int threads = 1;  // parallel batch members; any value is bitwise-equivalent
  net::ModelConfig model;
  AdamConfig adam;
  std::string resume;  // checkpoint to continue from
};

struct TrainResult {
  std::string checkpoint_path;  // final checkpoint
  std::string log_path;
  Metrics final_val;
  double final_loss = 0;
};

TrainResult train(const TrainConfig& cfg);

struct EvalRow {
  std::int64_t points = 0;
  double outlier_rate = 0;
  Metrics metrics;
};

// Runs the checkpoint over the held-out split (scene index % 10 == 9) with the
// landmark count and outlier-rate overrides applied by seeded resampling.
std::vector<EvalRow> evaluate(const std::string& checkpoint_path, const std::string& manifest,
                              const std::vector<std::int64_t>& points_list,
                              const std::vector<double>& outlier_rates, std::uint64_t seed,
                              std::int64_t max_scenes = -1);

std::string format_eval_table(const std::vector<EvalRow>& rows);

}  // namespace spf::train
