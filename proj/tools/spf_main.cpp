#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "spf/bench.hpp"
#include "spf/depthnet.hpp"
#include "spf/gradcheck.hpp"
#include "spf/scene.hpp"
#include "spf/sparseformer.hpp"
#include "spf/tensor.hpp"
#include "spf/train_eval.hpp"
#include "spf/util.hpp"
#include "spf/viz.hpp"

namespace {

namespace fs = std::filesystem;

void parse_into(const std::string& s, std::string& out) { out = s; }
void parse_into(const std::string& s, double& out) { out = std::stod(s); }
void parse_into(const std::string& s, std::int64_t& out) { out = std::stoll(s); }
void parse_into(const std::string& s, int& out) { out = std::stoi(s); }
void parse_into(const std::string& s, std::uint64_t& out) { out = std::stoull(s); }

std::vector<std::int64_t> parse_int_list(const std::string& s) {
  std::vector<std::int64_t> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoll(tok));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  return out;
}

// Registers a flag and remembers how to fill it from a --config file when the
// command line did not set it.
struct OptionMerger {
  std::vector<std::function<void(const std::map<std::string, std::string>&)>> appliers;

  template <class T>
  CLI::Option* add(CLI::App* cmd, const std::string& flag, T& var, const std::string& desc) {
    CLI::Option* opt = cmd->add_option(flag, var, desc);
    std::string key = flag;
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    appliers.push_back([opt, &var, key](const std::map<std::string, std::string>& kv) {
      auto it = kv.find(key);
      if (opt->count() == 0 && it != kv.end()) parse_into(it->second, var);
    });
    return opt;
  }

  void merge(const std::string& config_path) const {
    if (config_path.empty()) return;
    const auto kv = spf::util::read_kv_file(config_path);
    for (const auto& apply : appliers) apply(kv);
  }
};

int cmd_gen(const std::string& out_dir, std::int64_t scenes, spf::scene::SceneConfig cfg,
            std::uint64_t seed) {
  fs::create_directories(out_dir);
  std::vector<std::string> files;
  std::vector<spf::scene::Scene> all;
  for (std::int64_t i = 0; i < scenes; ++i) {
    auto sc = spf::scene::generate_scene(cfg, seed + static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%06lld.spfs", static_cast<long long>(i));
    spf::scene::write_scene((fs::path(out_dir) / name).string(), sc);
    files.push_back(name);
    all.push_back(std::move(sc));
  }
  spf::scene::write_manifest((fs::path(out_dir) / "manifest.txt").string(), cfg, files);
  std::cout << spf::scene::format_stats(spf::scene::dataset_stats(all, cfg.d_max));
  std::cout << "wrote " << scenes << " scenes to " << out_dir << "\n";
  return 0;
}

int cmd_viz(const std::string& checkpoint, const std::string& scene_file,
            const std::string& out_dir) {
  auto ck = spf::net::load_checkpoint(checkpoint);
  auto sc = spf::scene::read_scene(scene_file);
  spf::check(sc.landmarks.count_valid() > 0, "viz: scene has zero valid landmarks");
  auto out = spf::net::forward(sc.image, sc.landmarks, ck.params, ck.cfg);
  // finest SparseFormer runs at stride 1
  const auto& attention = out.attentions[3];
  const std::int64_t H = sc.image.dim(0), W = sc.image.dim(1);
  auto maps = spf::viz::attention_maps(attention, sc.landmarks, H, W, sc.image);
  spf::viz::write_viz_outputs(out_dir, maps, out.final_depth, sc.gt_depth, ck.cfg.d_max);
  std::cout << "wrote visualization maps to " << out_dir << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
  std::vector<spf::gradcheck::Report> reports;
  if (module == "all" || module == "tensor") reports.push_back(spf::gradcheck::tensor_suite(seed));
  if (module == "all" || module == "sparseformer")
    reports.push_back(spf::gradcheck::sparseformer_suite(seed));
  if (module == "all" || module == "model") reports.push_back(spf::gradcheck::model_suite(seed));
  spf::check(!reports.empty(), "unknown module: " + module + " (tensor|sparseformer|model|all)");
  bool ok = true;
  for (const auto& r : reports) {
    std::printf("%-14s max_rel_err %.3e (tol %.0e, %lld coordinates) %s\n", r.name.c_str(),
                r.max_rel_err, r.tol, static_cast<long long>(r.coords_checked),
                r.pass() ? "PASS" : "FAIL");
    ok = ok && r.pass();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SparseFormer depth completion: synthetic data, training, evaluation, "
               "visualization and scaling benchmarks"};
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "generate a synthetic scene dataset");
  OptionMerger gen_opts;
  std::string gen_out, gen_config;
  std::int64_t gen_scenes = 100;
  spf::scene::SceneConfig scfg;
  std::uint64_t gen_seed = 1;
  gen->add_option("--config", gen_config, "key=value config file (flags override)");
  gen_opts.add(gen, "--out", gen_out, "output directory")->required();
  gen_opts.add(gen, "--scenes", gen_scenes, "number of scenes");
  gen_opts.add(gen, "--height", scfg.height, "image height");
  gen_opts.add(gen, "--width", scfg.width, "image width");
  gen_opts.add(gen, "--density", scfg.landmark_density, "landmark density (fraction of pixels)");
  gen_opts.add(gen, "--outlier-rate", scfg.outlier_rate, "landmark outlier probability");
  gen_opts.add(gen, "--n-fixed", scfg.n_fixed, "fixed landmark list size (padding target)");
  gen_opts.add(gen, "--n-planes", scfg.n_planes, "max plane patches per scene");
  gen_opts.add(gen, "--n-boxes", scfg.n_boxes, "boxes per scene");
  gen_opts.add(gen, "--d-min", scfg.d_min, "minimum depth (m)");
  gen_opts.add(gen, "--d-max", scfg.d_max, "maximum depth (m)");
  gen_opts.add(gen, "--bias", scfg.sampling_bias, "edge bias of landmark sampling in [0,1]");
  gen_opts.add(gen, "--seed", gen_seed, "base seed");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train the depth completion model");
  OptionMerger tr_opts;
  spf::train::TrainConfig tcfg;
  std::string tr_config, enc_list, dec_list;
  tr->add_option("--config", tr_config, "key=value config file (flags override)");
  tr_opts.add(tr, "--data", tcfg.manifest, "dataset manifest")->required();
  tr_opts.add(tr, "--out", tcfg.out_dir, "output directory")->required();
  tr_opts.add(tr, "--iterations", tcfg.iterations, "training iterations");
  tr_opts.add(tr, "--batch", tcfg.batch, "batch size");
  tr_opts.add(tr, "--seed", tcfg.seed, "seed");
  tr_opts.add(tr, "--threads", tcfg.threads, "parallel batch members (bitwise-equivalent)");
  tr_opts.add(tr, "--val-every", tcfg.val_every, "validation interval (0 = off)");
  tr_opts.add(tr, "--ckpt-every", tcfg.ckpt_every, "checkpoint interval (0 = final only)");
  tr_opts.add(tr, "--log-every", tcfg.log_every, "loss logging interval");
  tr_opts.add(tr, "--lr", tcfg.adam.lr, "base learning rate");
  tr_opts.add(tr, "--decay-every", tcfg.adam.decay_every, "lr decay interval (iterations)");
  tr_opts.add(tr, "--decay-factor", tcfg.adam.decay_factor, "lr decay factor");
  tr_opts.add(tr, "--attn-width", tcfg.model.attn_width, "attention width C_a");
  tr_opts.add(tr, "--pos-bands", tcfg.model.pos_bands, "positional frequency bands");
  tr_opts.add(tr, "--refine-layers", tcfg.model.refine_layers,
              "refinement transformer layers (0 = identity ablation)");
  tr_opts.add(tr, "--refine-heads", tcfg.model.refine_heads, "refinement attention heads");
  tr_opts.add(tr, "--d-max", tcfg.model.d_max, "depth normalization ceiling (m)");
  tr_opts.add(tr, "--enc-channels", enc_list, "encoder channels, e.g. 16,32,64,128");
  tr_opts.add(tr, "--dec-channels", dec_list, "decoder channels, e.g. 64,32,16,16");
  tr_opts.add(tr, "--resume", tcfg.resume, "checkpoint to resume from");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint with landmark sweeps");
  OptionMerger ev_opts;
  std::string ev_ckpt, ev_data, ev_points = "2,32,200", ev_rates = "0", ev_out, ev_config;
  std::uint64_t ev_seed = 1;
  std::int64_t ev_max_scenes = -1;
  ev->add_option("--config", ev_config, "key=value config file (flags override)");
  ev_opts.add(ev, "--checkpoint", ev_ckpt, "checkpoint path")->required();
  ev_opts.add(ev, "--data", ev_data, "dataset manifest")->required();
  ev_opts.add(ev, "--points", ev_points, "landmark counts, comma separated");
  ev_opts.add(ev, "--outlier-rates", ev_rates, "outlier rates, comma separated");
  ev_opts.add(ev, "--seed", ev_seed, "resampling seed");
  ev_opts.add(ev, "--max-scenes", ev_max_scenes, "cap on eval scenes (-1 = all)");
  ev_opts.add(ev, "--out", ev_out, "write the CSV table here as well");

  // ---- viz ----
  auto* vz = app.add_subcommand("viz", "attention visualization maps for one scene");
  std::string vz_ckpt, vz_scene, vz_out;
  vz->add_option("--checkpoint", vz_ckpt, "checkpoint path")->required();
  vz->add_option("--scene", vz_scene, "scene file")->required();
  vz->add_option("--out", vz_out, "output directory")->required();

  // ---- bench ----
  auto* bn = app.add_subcommand("bench", "attention cost scaling benchmark");
  OptionMerger bn_opts;
  std::string bn_heights = "64,128,256", bn_n = "256", bn_out, bn_config;
  int bn_repeats = 5;
  std::uint64_t bn_seed = 1;
  bn->add_option("--config", bn_config, "key=value config file (flags override)");
  bn_opts.add(bn, "--heights", bn_heights, "square feature sizes, comma separated");
  bn_opts.add(bn, "--n-landmarks", bn_n, "landmark counts, comma separated");
  bn_opts.add(bn, "--repeats", bn_repeats, "timing repeats per configuration");
  bn_opts.add(bn, "--seed", bn_seed, "seed");
  bn_opts.add(bn, "--out", bn_out, "write the CSV here as well");

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_module = "all";
  std::uint64_t gc_seed = 2024;
  gc->add_option("--module", gc_module, "all|tensor|sparseformer|model");
  gc->add_option("--seed", gc_seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      gen_opts.merge(gen_config);
      return cmd_gen(gen_out, gen_scenes, scfg, gen_seed);
    }
    if (tr->parsed()) {
      tr_opts.merge(tr_config);
      if (!enc_list.empty()) {
        auto v = parse_int_list(enc_list);
        spf::check(v.size() == 4, "--enc-channels needs 4 values");
        for (int i = 0; i < 4; ++i) tcfg.model.enc_channels[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
      }
      if (!dec_list.empty()) {
        auto v = parse_int_list(dec_list);
        spf::check(v.size() == 4, "--dec-channels needs 4 values");
        for (int i = 0; i < 4; ++i) tcfg.model.dec_channels[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
      }
      auto result = spf::train::train(tcfg);
      std::printf("final checkpoint: %s\n", result.checkpoint_path.c_str());
      std::printf("validation: rel=%.4f rmse=%.4f a1=%.4f a2=%.4f a3=%.4f (%lld px)\n",
                  result.final_val.rel, result.final_val.rmse, result.final_val.a1,
                  result.final_val.a2, result.final_val.a3,
                  static_cast<long long>(result.final_val.n_pixels));
      return 0;
    }
    if (ev->parsed()) {
      ev_opts.merge(ev_config);
      auto rows = spf::train::evaluate(ev_ckpt, ev_data, parse_int_list(ev_points),
                                       parse_double_list(ev_rates), ev_seed, ev_max_scenes);
      const std::string table = spf::train::format_eval_table(rows);
      std::cout << table;
      // soft trend note: REL should not increase with more landmarks
      for (size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].outlier_rate == rows[i - 1].outlier_rate &&
            rows[i].points > rows[i - 1].points &&
            rows[i].metrics.rel > rows[i - 1].metrics.rel) {
          std::cout << "# note: REL increased from " << rows[i - 1].points << " to "
                    << rows[i].points << " landmarks\n";
        }
      }
      if (!ev_out.empty()) {
        std::ofstream f(ev_out);
        spf::check(f.good(), "cannot open for writing: " + ev_out);
        f << table;
      }
      return 0;
    }
    if (vz->parsed()) return cmd_viz(vz_ckpt, vz_scene, vz_out);
    if (bn->parsed()) {
      bn_opts.merge(bn_config);
      auto result = spf::bench::run(parse_int_list(bn_heights), parse_int_list(bn_n), bn_repeats,
                                    bn_seed);
      const std::string csv = spf::bench::to_csv(result);
      std::cout << csv;
      if (!bn_out.empty()) {
        std::ofstream f(bn_out);
        spf::check(f.good(), "cannot open for writing: " + bn_out);
        f << csv;
      }
      return 0;
    }
    if (gc->parsed()) return cmd_gradcheck(gc_module, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
