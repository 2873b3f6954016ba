#include "spf/depthnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spf/rng.hpp"

namespace spf::net {

sf::SparseFormerConfig ModelConfig::sf_config(int stage) const {
  sf::SparseFormerConfig c;
  c.channels = dec_channels[static_cast<size_t>(stage)];
  c.pos_bands = pos_bands;
  c.attn_width = attn_width;
  c.refine_layers = refine_layers;
  c.refine_heads = refine_heads;
  c.d_max = d_max;
  return c;
}

void ModelConfig::validate() const {
  check(dec_channels[0] == enc_channels[2] && dec_channels[1] == enc_channels[1] &&
            dec_channels[2] == enc_channels[0],
        "decoder widths must match the encoder skips: dec[0..2] == enc[2,1,0]");
  check(attn_width >= 1 && pos_bands >= 0 && refine_layers >= 0 && refine_heads >= 1,
        "bad model config");
  check(d_max > 0.0, "d_max must be positive");
}

void ModelParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  for (int i = 0; i < 4; ++i) {
    fn("enc" + std::to_string(i) + ".w", enc[static_cast<size_t>(i)].w);
    fn("enc" + std::to_string(i) + ".b", enc[static_cast<size_t>(i)].b);
  }
  for (int i = 0; i < 4; ++i) {
    fn("dec" + std::to_string(i) + ".w", dec[static_cast<size_t>(i)].w);
    fn("dec" + std::to_string(i) + ".b", dec[static_cast<size_t>(i)].b);
    sformers[static_cast<size_t>(i)].visit("sf" + std::to_string(i), fn);
  }
  fn("head.w", head.w);
  fn("head.b", head.b);
}

std::int64_t ModelParams::param_count() {
  std::int64_t n = 0;
  visit([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

ModelParams ModelParams::watched(Tape& tape) {
  ModelParams copy = *this;
  copy.visit([&](const std::string&, Tensor& t) { t = tape.watch(t); });
  return copy;
}

namespace {

Tensor glorot(Rng& rng, Shape shape, std::int64_t fan_in, std::int64_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor(std::move(shape), std::move(v));
}

ModelParams::Conv init_conv(Rng& rng, std::int64_t k, std::int64_t cin, std::int64_t cout) {
  ModelParams::Conv c;
  c.w = glorot(rng, {k, k, cin, cout}, k * k * cin, k * k * cout);
  // small positive bias keeps relu pre-activations off the exact kink when the
  // receptive field is all zeros
  c.b = Tensor::full({cout}, 0.01);
  return c;
}

}  // namespace

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, /*stream=*/11);
  ModelParams p;
  std::int64_t cin = 3;
  for (int i = 0; i < 4; ++i) {
    p.enc[static_cast<size_t>(i)] = init_conv(rng, 3, cin, cfg.enc_channels[static_cast<size_t>(i)]);
    cin = cfg.enc_channels[static_cast<size_t>(i)];
  }
  cin = cfg.enc_channels[3];
  for (int i = 0; i < 4; ++i) {
    // the finest stage has no encoder skip; it takes the raw image alongside
    // the upsampled features so depth edges stay sharp at full resolution
    const std::int64_t stage_in = i == 3 ? cin + 3 : cin;
    p.dec[static_cast<size_t>(i)] =
        init_conv(rng, 3, stage_in, cfg.dec_channels[static_cast<size_t>(i)]);
    cin = cfg.dec_channels[static_cast<size_t>(i)];
    auto sfc = cfg.sf_config(i);
    p.sformers[static_cast<size_t>(i)] = sf::init_sparseformer(sfc, rng);
  }
  p.head = init_conv(rng, 1, cfg.dec_channels[3], 1);
  // bias the head toward mid-range depth so early iterations are sane
  p.head.b = Tensor({1}, {std::log(std::expm1(2.5))});
  return p;
}

MultiScaleOutput forward(const Tensor& image, const scene::LandmarkSet& landmarks,
                         ModelParams& params, const ModelConfig& cfg) {
  check(image.rank() == 3 && image.dim(2) == 3, "forward expects an [H,W,3] image");
  const std::int64_t H = image.dim(0), W = image.dim(1);
  check(H % 16 == 0 && W % 16 == 0, "image size must be divisible by 16, got " +
                                         shape_str(image.shape()));

  std::array<Tensor, 4> enc_feats;
  Tensor x = image;
  for (int i = 0; i < 4; ++i) {
    x = relu(conv2d(x, params.enc[static_cast<size_t>(i)].w, params.enc[static_cast<size_t>(i)].b,
                    3, 2));
    enc_feats[static_cast<size_t>(i)] = x;
  }

  MultiScaleOutput out;
  for (int s = 0; s < 4; ++s) {
    x = upsample_nearest2(x);
    if (s == 3) x = concat({x, image}, 2);
    x = relu(conv2d(x, params.dec[static_cast<size_t>(s)].w, params.dec[static_cast<size_t>(s)].b,
                    3, 1));
    if (s < 3) x = add(x, enc_feats[static_cast<size_t>(2 - s)]);
    const int stride = 8 >> s;
    auto sf_out = sf::sparseformer_forward(x, landmarks, stride,
                                           params.sformers[static_cast<size_t>(s)],
                                           cfg.sf_config(s));
    x = sf_out.f_fused;
    out.d_outs.push_back(sf_out.d_out);
    out.confidences.push_back(sf_out.confidence);
    out.attentions.push_back(sf_out.attention);
    out.zero_landmarks.push_back(sf_out.zero_landmarks);
  }
  Tensor logits = conv2d(x, params.head.w, params.head.b, 1, 1);
  out.final_depth = reshape(softplus(logits), {H, W});
  return out;
}

std::pair<Tensor, Tensor> downsample_gt(const Tensor& gt, const Tensor& valid, int factor) {
  check(gt.rank() == 2 && valid.rank() == 2, "downsample_gt expects [H,W]");
  check(factor >= 1, "factor must be positive");
  if (factor == 1) return {gt, valid};
  const std::int64_t H = gt.dim(0), W = gt.dim(1);
  check(H % factor == 0 && W % factor == 0, "size not divisible by pooling factor");
  const std::int64_t Hs = H / factor, Ws = W / factor;
  std::vector<double> dv(static_cast<size_t>(Hs * Ws), 0.0);
  std::vector<double> vv(static_cast<size_t>(Hs * Ws), 0.0);
  for (std::int64_t r = 0; r < Hs; ++r)
    for (std::int64_t c = 0; c < Ws; ++c) {
      double sum = 0.0;
      double count = 0.0;
      for (int dr = 0; dr < factor; ++dr)
        for (int dc = 0; dc < factor; ++dc) {
          const std::int64_t p = (r * factor + dr) * W + (c * factor + dc);
          if (valid.at(p) == 0.0) continue;
          sum += gt.at(p);
          count += 1.0;
        }
      if (count > 0.0) {
        dv[static_cast<size_t>(r * Ws + c)] = sum / count;
        vv[static_cast<size_t>(r * Ws + c)] = 1.0;
      }
    }
  return {Tensor({Hs, Ws}, std::move(dv)), Tensor({Hs, Ws}, std::move(vv))};
}

Tensor loss(const MultiScaleOutput& out, const Tensor& gt_depth, const Tensor& gt_valid) {
  bool any_valid = false;
  for (double v : gt_valid.data()) any_valid = any_valid || v != 0.0;
  check(any_valid, "loss: no valid ground-truth pixels at full resolution");

  Tensor total = add(l1_loss(out.final_depth, gt_depth, gt_valid),
                     l2_loss(out.final_depth, gt_depth, gt_valid));
  // fine-to-coarse weights over the four SparseFormer maps
  static constexpr double kWeights[4] = {0.10, 0.15, 0.25, 0.50};  // decoder order
  for (int s = 0; s < 4; ++s) {
    if (out.zero_landmarks[static_cast<size_t>(s)]) continue;
    const Tensor& d = out.d_outs[static_cast<size_t>(s)];
    const int factor = static_cast<int>(gt_depth.dim(0) / d.dim(0));
    auto [gt_s, valid_s] = downsample_gt(gt_depth, gt_valid, factor);
    bool any = false;
    for (double v : valid_s.data()) any = any || v != 0.0;
    if (!any) continue;
    Tensor term = add(l1_loss(d, gt_s, valid_s), l2_loss(d, gt_s, valid_s));
    total = add(total, scale(term, kWeights[s]));
  }
  return total;
}

// ---- checkpoint ----------------------------------------------------------------

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

void write_str(std::ofstream& f, const std::string& s) {
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::ifstream& f) {
  const auto n = read_pod<std::uint32_t>(f);
  std::string s(n, '\0');
  f.read(s.data(), n);
  return s;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join4(const std::array<std::int64_t, 4>& a) {
  std::ostringstream os;
  os << a[0] << ',' << a[1] << ',' << a[2] << ',' << a[3];
  return os.str();
}

std::array<std::int64_t, 4> parse4(const std::string& s) {
  std::array<std::int64_t, 4> out{};
  std::istringstream is(s);
  std::string tok;
  for (int i = 0; i < 4; ++i) {
    check(static_cast<bool>(std::getline(is, tok, ',')), "bad channel list: " + s);
    out[static_cast<size_t>(i)] = std::stoll(tok);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const std::map<std::string, std::string>& extra, ModelParams& params,
                     const std::map<std::string, Tensor>& extra_tensors) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "cannot open for writing: " + path);
  f.write("SPFC", 4);
  write_pod<std::uint32_t>(f, 1);

  std::map<std::string, std::string> kv = extra;
  kv["model.enc"] = join4(cfg.enc_channels);
  kv["model.dec"] = join4(cfg.dec_channels);
  kv["model.attn_width"] = std::to_string(cfg.attn_width);
  kv["model.pos_bands"] = std::to_string(cfg.pos_bands);
  kv["model.refine_layers"] = std::to_string(cfg.refine_layers);
  kv["model.refine_heads"] = std::to_string(cfg.refine_heads);
  kv["model.d_max"] = fmt_double(cfg.d_max);
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    write_str(f, k);
    write_str(f, v);
  }

  auto write_tensor = [&f](const std::string& name, const Tensor& t) {
    write_str(f, name);
    write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d)
      write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(t.dim(d)));
    for (double v : t.data()) write_pod<float>(f, static_cast<float>(v));
  };
  std::uint32_t count = 0;
  params.visit([&](const std::string&, Tensor&) { ++count; });
  write_pod<std::uint32_t>(f, count + static_cast<std::uint32_t>(extra_tensors.size()));
  params.visit([&](const std::string& name, Tensor& t) { write_tensor(name, t); });
  for (const auto& [name, t] : extra_tensors) write_tensor(name, t);
  check(f.good(), "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  check(f.good() && std::memcmp(magic, "SPFC", 4) == 0, "bad checkpoint magic in " + path);
  const auto version = read_pod<std::uint32_t>(f);
  check(version == 1, "unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  const auto n_kv = read_pod<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < n_kv; ++i) {
    std::string k = read_str(f);
    ck.extra[k] = read_str(f);
  }
  auto need = [&](const std::string& k) {
    auto it = ck.extra.find(k);
    check(it != ck.extra.end(), "checkpoint missing key " + k);
    return it->second;
  };
  ck.cfg.enc_channels = parse4(need("model.enc"));
  ck.cfg.dec_channels = parse4(need("model.dec"));
  ck.cfg.attn_width = std::stoll(need("model.attn_width"));
  ck.cfg.pos_bands = std::stoi(need("model.pos_bands"));
  ck.cfg.refine_layers = std::stoi(need("model.refine_layers"));
  ck.cfg.refine_heads = std::stoi(need("model.refine_heads"));
  ck.cfg.d_max = std::stod(need("model.d_max"));

  std::map<std::string, Tensor> tensors;
  const auto n_tensors = read_pod<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = read_str(f);
    const auto ndim = read_pod<std::uint32_t>(f);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape.push_back(static_cast<std::int64_t>(read_pod<std::uint32_t>(f)));
    std::vector<double> vals(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : vals) v = static_cast<double>(read_pod<float>(f));
    tensors.emplace(name, Tensor(std::move(shape), std::move(vals)));
  }
  check(f.good(), "truncated checkpoint: " + path);

  // rebuild the parameter structure and fill from the named tensors
  ck.params = init_model(ck.cfg, /*seed=*/0);
  ck.params.visit([&](const std::string& name, Tensor& t) {
    auto it = tensors.find(name);
    check(it != tensors.end(), "checkpoint missing tensor " + name);
    check(it->second.shape() == t.shape(), "checkpoint tensor " + name + " has shape " +
                                               shape_str(it->second.shape()) + ", expected " +
                                               shape_str(t.shape()));
    t = it->second;
    tensors.erase(it);
  });
  ck.extra_tensors = std::move(tensors);
  return ck;
}

}  // namespace spf::net
