#include "spf/train_eval.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "spf/rng.hpp"
#include "spf/util.hpp"

namespace spf::train {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void quantize_f32(Tensor& t) {
  auto v = t.raw();
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace

double Adam::lr_at(std::int64_t iter) const {
  const auto drops = cfg_.decay_every > 0 ? iter / cfg_.decay_every : 0;
  return cfg_.lr * std::pow(cfg_.decay_factor, static_cast<double>(drops));
}

void Adam::step(net::ModelParams& params, const std::map<std::string, Tensor>& grads) {
  const double lr = lr_at(steps_);
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  params.visit([&](const std::string& name, Tensor& p) {
    auto it = grads.find(name);
    check(it != grads.end(), "adam_step: missing gradient for " + name);
    const Tensor& g = it->second;
    check(g.shape() == p.shape(), "adam_step: gradient shape mismatch for " + name);
    for (double gv : g.data())
      check(std::isfinite(gv), "adam_step: non-finite gradient for " + name);

    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Tensor::zeros(p.shape())).first;
      v_.emplace(name, Tensor::zeros(p.shape()));
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    std::vector<double> pnew(p.data().begin(), p.data().end());
    auto mr = m.raw();
    auto vr = v.raw();
    const double* gp = g.data().data();
    for (std::int64_t i = 0; i < p.size(); ++i) {
      mr[i] = cfg_.beta1 * mr[i] + (1.0 - cfg_.beta1) * gp[i];
      vr[i] = cfg_.beta2 * vr[i] + (1.0 - cfg_.beta2) * gp[i] * gp[i];
      const double mhat = mr[i] / bc1;
      const double vhat = vr[i] / bc2;
      pnew[static_cast<size_t>(i)] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p = Tensor(p.shape(), std::move(pnew));
  });
}

void Adam::quantize_state_f32() {
  for (auto& [name, t] : m_) quantize_f32(t);
  for (auto& [name, t] : v_) quantize_f32(t);
}

std::map<std::string, Tensor> Adam::state_tensors() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : m_) out.emplace("opt.m." + name, t);
  for (const auto& [name, t] : v_) out.emplace("opt.v." + name, t);
  return out;
}

void Adam::load_state_tensors(const std::map<std::string, Tensor>& tensors) {
  m_.clear();
  v_.clear();
  for (const auto& [name, t] : tensors) {
    if (name.rfind("opt.m.", 0) == 0) m_.emplace(name.substr(6), t);
    if (name.rfind("opt.v.", 0) == 0) v_.emplace(name.substr(6), t);
  }
}

Metrics compute_metrics(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  check(pred.size() == gt.size() && pred.size() == valid.size(),
        "compute_metrics: size mismatch");
  MetricsAccumulator acc;
  acc.add(pred, gt, valid);
  return acc.finalize();
}

void MetricsAccumulator::add(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
  const double* pp = pred.data().data();
  const double* pg = gt.data().data();
  const double* pv = valid.data().data();
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    if (pv[i] == 0.0) continue;
    check(pg[i] > 0.0 && pp[i] > 0.0, "compute_metrics: non-positive depth on a valid pixel");
    const double diff = pg[i] - pp[i];
    sum_rel_ += std::abs(diff / pg[i]);
    sum_sq_ += diff * diff;
    const double ratio = std::max(pg[i] / pp[i], pp[i] / pg[i]);
    a1_ += ratio < 1.25;
    a2_ += ratio < 1.25 * 1.25;
    a3_ += ratio < 1.25 * 1.25 * 1.25;
    ++n_;
  }
}

Metrics MetricsAccumulator::finalize() const {
  check(n_ > 0, "compute_metrics: no valid pixels");
  Metrics m;
  m.n_pixels = n_;
  const double inv = 1.0 / static_cast<double>(n_);
  m.rel = sum_rel_ * inv;
  m.rmse = std::sqrt(sum_sq_ * inv);
  m.a1 = static_cast<double>(a1_) * inv;
  m.a2 = static_cast<double>(a2_) * inv;
  m.a3 = static_cast<double>(a3_) * inv;
  return m;
}

// ---- training -------------------------------------------------------------------

namespace {

struct MemberResult {
  double loss = 0;
  std::vector<Tensor> grads;  // in visit order
};

MemberResult run_member(const scene::Scene& sc, net::ModelParams& params,
                        const net::ModelConfig& cfg) {
  Tape tape;
  net::ModelParams watched = params.watched(tape);
  auto out = net::forward(sc.image, sc.landmarks, watched, cfg);
  Tensor l = net::loss(out, sc.gt_depth, sc.gt_valid);
  tape.backward(l);
  MemberResult res;
  res.loss = l.value();
  watched.visit([&](const std::string&, Tensor& t) { res.grads.push_back(tape.grad(t)); });
  return res;
}

Metrics validate(const std::vector<const scene::Scene*>& val_scenes, net::ModelParams& params,
                 const net::ModelConfig& cfg) {
  MetricsAccumulator acc;
  for (const scene::Scene* sc : val_scenes) {
    auto out = net::forward(sc->image, sc->landmarks, params, cfg);
    acc.add(out.final_depth, sc->gt_depth, sc->gt_valid);
  }
  return acc.finalize();
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  namespace fs = std::filesystem;
  check(cfg.iterations >= 1 && cfg.batch >= 1, "train: bad iteration/batch config");
  fs::create_directories(cfg.out_dir);

  auto manifest = scene::read_manifest(cfg.manifest);
  std::vector<scene::Scene> scenes;
  scenes.reserve(manifest.files.size());
  for (const auto& f : manifest.files) scenes.push_back(scene::read_scene(f));

  std::vector<const scene::Scene*> train_split, val_split;
  for (size_t i = 0; i < scenes.size(); ++i) {
    if (i % 10 == 9) val_split.push_back(&scenes[i]);
    else train_split.push_back(&scenes[i]);
  }
  check(!train_split.empty(), "train: empty training split");
  if (val_split.empty()) val_split.push_back(train_split.back());

  net::ModelConfig model_cfg = cfg.model;
  net::ModelParams params;
  Adam adam(cfg.adam);
  Rng batch_rng(cfg.seed, /*stream=*/21);
  std::int64_t start_iter = 0;

  if (!cfg.resume.empty()) {
    auto ck = net::load_checkpoint(cfg.resume);
    model_cfg = ck.cfg;
    params = ck.params;
    adam.load_state_tensors(ck.extra_tensors);
    auto need = [&](const std::string& k) {
      auto it = ck.extra.find(k);
      check(it != ck.extra.end(), "resume checkpoint missing key " + k);
      return it->second;
    };
    start_iter = std::stoll(need("train.iter"));
    adam.set_steps_done(start_iter);
    batch_rng.set_counter(std::stoull(need("train.rng_counter")));
  } else {
    model_cfg.validate();
    params = net::init_model(model_cfg, cfg.seed);
  }

  const std::string log_path = (fs::path(cfg.out_dir) / "log.csv").string();
  std::ofstream log(log_path, cfg.resume.empty() ? std::ios::trunc : std::ios::app);
  check(log.good(), "cannot open log for writing: " + log_path);
  if (cfg.resume.empty()) log << "iter,lr,loss,rel,rmse,a1,a2,a3\n";

  auto save = [&](const std::string& name, std::int64_t next_iter) {
    std::map<std::string, std::string> kv;
    kv["train.iter"] = std::to_string(next_iter);
    kv["train.rng_counter"] = std::to_string(batch_rng.counter());
    kv["train.seed"] = std::to_string(cfg.seed);
    kv["adam.lr"] = fmt(cfg.adam.lr);
    kv["adam.decay_every"] = std::to_string(cfg.adam.decay_every);
    kv["adam.decay_factor"] = fmt(cfg.adam.decay_factor);
    const std::string path = (fs::path(cfg.out_dir) / name).string();
    net::save_checkpoint(path, model_cfg, kv, params, adam.state_tensors());
    return path;
  };

  const int threads = std::max(1, cfg.threads);
  TrainResult result;
  Metrics last_val{};
  bool have_val = false;
  double loss_value = 0.0;

  for (std::int64_t iter = start_iter; iter < cfg.iterations; ++iter) {
    std::vector<const scene::Scene*> batch;
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const auto pick = batch_rng.uniform_int(0, static_cast<std::int64_t>(train_split.size()) - 1);
      batch.push_back(train_split[static_cast<size_t>(pick)]);
    }

    std::vector<MemberResult> results(batch.size());
    if (threads == 1 || batch.size() == 1) {
      for (size_t b = 0; b < batch.size(); ++b) results[b] = run_member(*batch[b], params, model_cfg);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
      for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (size_t b = static_cast<size_t>(t); b < batch.size(); b += static_cast<size_t>(threads))
              results[b] = run_member(*batch[b], params, model_cfg);
          } catch (...) {
            errors[static_cast<size_t>(t)] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // average in batch order
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    loss_value = 0.0;
    for (const auto& r : results) loss_value += r.loss;
    loss_value *= inv_batch;

    std::map<std::string, Tensor> grads;
    size_t pi = 0;
    params.visit([&](const std::string& name, Tensor& p) {
      std::vector<double> acc(static_cast<size_t>(p.size()), 0.0);
      for (const auto& r : results) {
        const Tensor& g = r.grads[pi];
        const double* gp = g.data().data();
        for (std::int64_t i = 0; i < p.size(); ++i) acc[static_cast<size_t>(i)] += gp[i];
      }
      for (auto& v : acc) v *= inv_batch;
      grads.emplace(name, Tensor(p.shape(), std::move(acc)));
      ++pi;
    });

    const double lr_now = adam.lr_at(iter);
    adam.step(params, grads);
    params.visit([&](const std::string&, Tensor& p) { quantize_f32(p); });
    adam.quantize_state_f32();

    const std::int64_t done = iter + 1;
    const bool do_val = cfg.val_every > 0 && done % cfg.val_every == 0;
    const bool do_log = (cfg.log_every > 0 && done % cfg.log_every == 0) || done == cfg.iterations;
    if (do_val) {
      last_val = validate(val_split, params, model_cfg);
      have_val = true;
      log << done << ',' << fmt(lr_now) << ',' << fmt(loss_value) << ',' << fmt(last_val.rel)
          << ',' << fmt(last_val.rmse) << ',' << fmt(last_val.a1) << ',' << fmt(last_val.a2) << ','
          << fmt(last_val.a3) << '\n';
      log.flush();
      if (util::verbose())
        std::fprintf(stderr, "iter %lld loss %.4f val rel %.4f a1 %.4f\n",
                     static_cast<long long>(done), loss_value, last_val.rel, last_val.a1);
    } else if (do_log) {
      log << done << ',' << fmt(lr_now) << ',' << fmt(loss_value) << ",,,,,\n";
      log.flush();
    }
    if (cfg.ckpt_every > 0 && done % cfg.ckpt_every == 0 && done != cfg.iterations)
      save("ckpt_" + std::to_string(done) + ".spfc", done);
  }

  if (!have_val) last_val = validate(val_split, params, model_cfg);
  result.checkpoint_path = save("checkpoint_final.spfc", cfg.iterations);
  result.log_path = log_path;
  result.final_val = last_val;
  result.final_loss = loss_value;
  return result;
}

std::vector<EvalRow> evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                              const std::vector<std::int64_t>& points_list,
                              const std::vector<double>& outlier_rates, std::uint64_t seed,
                              std::int64_t max_scenes) {
  check(!points_list.empty(), "evaluate: empty landmark count list");
  check(!outlier_rates.empty(), "evaluate: empty outlier rate list");
  auto ck = net::load_checkpoint(checkpoint_path);
  auto manifest = scene::read_manifest(manifest_path);

  std::vector<scene::Scene> eval_scenes;
  for (size_t i = 0; i < manifest.files.size(); ++i) {
    if (i % 10 != 9) continue;
    eval_scenes.push_back(scene::read_scene(manifest.files[i]));
    if (max_scenes > 0 && static_cast<std::int64_t>(eval_scenes.size()) >= max_scenes) break;
  }
  if (eval_scenes.empty()) {
    check(!manifest.files.empty(), "evaluate: empty manifest");
    eval_scenes.push_back(scene::read_scene(manifest.files[0]));
  }

  std::vector<EvalRow> rows;
  for (double rate : outlier_rates) {
    for (std::int64_t points : points_list) {
      MetricsAccumulator acc;
      for (size_t si = 0; si < eval_scenes.size(); ++si) {
        const auto& sc = eval_scenes[si];
        auto lm = scene::resample_landmarks(sc, points, rate, manifest.cfg.sampling_bias,
                                            manifest.cfg.d_min, manifest.cfg.d_max,
                                            seed + 977 * si);
        auto out = net::forward(sc.image, lm, ck.params, ck.cfg);
        acc.add(out.final_depth, sc.gt_depth, sc.gt_valid);
      }
      rows.push_back(EvalRow{points, rate, acc.finalize()});
    }
  }
  return rows;
}

std::string format_eval_table(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  os << "# metrics pooled pixel-weighted over the eval split\n";
  os << "points,outlier_rate,rel,rmse,a1,a2,a3,n_pixels\n";
  for (const auto& r : rows) {
    os << r.points << ',' << r.outlier_rate << ',' << fmt(r.metrics.rel) << ','
       << fmt(r.metrics.rmse) << ',' << fmt(r.metrics.a1) << ',' << fmt(r.metrics.a2) << ','
       << fmt(r.metrics.a3) << ',' << r.metrics.n_pixels << '\n';
  }
  return os.str();
}

}  // namespace spf::train
