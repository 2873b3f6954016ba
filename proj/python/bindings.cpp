#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "spf/depthnet.hpp"
#include "spf/gradcheck.hpp"
#include "spf/scene.hpp"
#include "spf/sparseformer.hpp"
#include "spf/tensor.hpp"
#include "spf/train_eval.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace {

py::array_t<double> to_array(const spf::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), t.data().data(), static_cast<size_t>(t.size()) * sizeof(double));
  return out;
}

spf::Tensor from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  spf::Shape shape;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) shape.push_back(a.shape(d));
  std::vector<double> vals(static_cast<size_t>(a.size()));
  std::memcpy(vals.data(), a.data(), vals.size() * sizeof(double));
  return spf::Tensor(std::move(shape), std::move(vals));
}

spf::scene::LandmarkSet landmarks_from(const py::array_t<std::int64_t>& uv,
                                       const py::array_t<double>& d_in,
                                       const py::array_t<bool>& valid) {
  spf::check(uv.ndim() == 2 && uv.shape(1) == 2, "uv must be [N,2]");
  const auto n = uv.shape(0);
  spf::check(d_in.ndim() == 1 && d_in.shape(0) == n, "d_in must be [N]");
  spf::check(valid.ndim() == 1 && valid.shape(0) == n, "valid must be [N]");
  spf::scene::LandmarkSet lm;
  lm.uv.assign(static_cast<size_t>(2 * n), 0);
  lm.d_in.assign(static_cast<size_t>(n), 0.0);
  lm.valid.assign(static_cast<size_t>(n), 0);
  lm.is_outlier.assign(static_cast<size_t>(n), 0);
  auto uva = uv.unchecked<2>();
  auto da = d_in.unchecked<1>();
  auto va = valid.unchecked<1>();
  for (py::ssize_t i = 0; i < n; ++i) {
    if (!va(i)) continue;
    lm.uv[static_cast<size_t>(2 * i)] = static_cast<std::int32_t>(uva(i, 0));
    lm.uv[static_cast<size_t>(2 * i + 1)] = static_cast<std::int32_t>(uva(i, 1));
    lm.d_in[static_cast<size_t>(i)] = da(i);
    lm.valid[static_cast<size_t>(i)] = 1;
  }
  return lm;
}

py::dict scene_to_dict(const spf::scene::Scene& sc) {
  py::dict d;
  d["image"] = to_array(sc.image);
  d["gt_depth"] = to_array(sc.gt_depth);
  d["gt_valid"] = to_array(sc.gt_valid);
  const auto n = sc.landmarks.size();
  py::array_t<std::int64_t> uv({n, static_cast<std::int64_t>(2)});
  py::array_t<double> din(n);
  py::array_t<bool> valid(n);
  py::array_t<bool> outlier(n);
  for (std::int64_t i = 0; i < n; ++i) {
    uv.mutable_at(i, 0) = sc.landmarks.uv[static_cast<size_t>(2 * i)];
    uv.mutable_at(i, 1) = sc.landmarks.uv[static_cast<size_t>(2 * i + 1)];
    din.mutable_at(i) = sc.landmarks.d_in[static_cast<size_t>(i)];
    valid.mutable_at(i) = sc.landmarks.valid[static_cast<size_t>(i)] != 0;
    outlier.mutable_at(i) = sc.landmarks.is_outlier[static_cast<size_t>(i)] != 0;
  }
  d["uv"] = uv;
  d["d_in"] = din;
  d["valid"] = valid;
  d["is_outlier"] = outlier;
  return d;
}

spf::net::ModelConfig config_from_dict(const py::dict& d) {
  spf::net::ModelConfig cfg;
  for (auto item : d) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "enc_channels" || key == "dec_channels") {
      auto v = py::cast<std::vector<std::int64_t>>(item.second);
      spf::check(v.size() == 4, key + " needs 4 entries");
      auto& dst = key == "enc_channels" ? cfg.enc_channels : cfg.dec_channels;
      for (int i = 0; i < 4; ++i) dst[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
    } else if (key == "attn_width") cfg.attn_width = py::cast<std::int64_t>(item.second);
    else if (key == "pos_bands") cfg.pos_bands = py::cast<int>(item.second);
    else if (key == "refine_layers") cfg.refine_layers = py::cast<int>(item.second);
    else if (key == "refine_heads") cfg.refine_heads = py::cast<int>(item.second);
    else if (key == "d_max") cfg.d_max = py::cast<double>(item.second);
    else spf::fail("unknown config key: " + key);
  }
  return cfg;
}

py::dict config_to_dict(const spf::net::ModelConfig& cfg) {
  py::dict d;
  d["enc_channels"] = std::vector<std::int64_t>(cfg.enc_channels.begin(), cfg.enc_channels.end());
  d["dec_channels"] = std::vector<std::int64_t>(cfg.dec_channels.begin(), cfg.dec_channels.end());
  d["attn_width"] = cfg.attn_width;
  d["pos_bands"] = cfg.pos_bands;
  d["refine_layers"] = cfg.refine_layers;
  d["refine_heads"] = cfg.refine_heads;
  d["d_max"] = cfg.d_max;
  return d;
}

// Model handle owning config + parameters.
struct DepthModel {
  spf::net::ModelConfig cfg;
  spf::net::ModelParams params;

  DepthModel(const py::dict& config, std::uint64_t seed) : cfg(config_from_dict(config)) {
    params = spf::net::init_model(cfg, seed);
  }
  explicit DepthModel(const std::string& path) {
    auto ck = spf::net::load_checkpoint(path);
    cfg = ck.cfg;
    params = ck.params;
  }

  py::dict forward(const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
                   const py::array_t<std::int64_t>& uv, const py::array_t<double>& d_in,
                   const py::array_t<bool>& valid) {
    auto lm = landmarks_from(uv, d_in, valid);
    auto out = spf::net::forward(from_array(image), lm, params, cfg);
    py::dict d;
    d["final_depth"] = to_array(out.final_depth);
    py::list douts, confs, flags;
    for (size_t s = 0; s < out.d_outs.size(); ++s) {
      douts.append(to_array(out.d_outs[s]));
      confs.append(to_array(out.confidences[s]));
      flags.append(static_cast<bool>(out.zero_landmarks[s]));
    }
    d["d_outs"] = douts;
    d["confidences"] = confs;
    d["zero_landmarks"] = flags;
    if (!out.zero_landmarks[3]) d["attention"] = to_array(out.attentions[3]);
    return d;
  }

  double loss(const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
              const py::array_t<std::int64_t>& uv, const py::array_t<double>& d_in,
              const py::array_t<bool>& valid,
              const py::array_t<double, py::array::c_style | py::array::forcecast>& gt_depth,
              const py::array_t<double, py::array::c_style | py::array::forcecast>& gt_valid) {
    auto lm = landmarks_from(uv, d_in, valid);
    auto out = spf::net::forward(from_array(image), lm, params, cfg);
    return spf::net::loss(out, from_array(gt_depth), from_array(gt_valid)).value();
  }

  void save(const std::string& path) { spf::net::save_checkpoint(path, cfg, {}, params); }
  std::int64_t param_count() { return params.param_count(); }
  py::dict config() const { return config_to_dict(cfg); }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SparseFormer depth completion core";

  m.def(
      "positional_encoding",
      [](std::int64_t h, std::int64_t w, int bands) {
        return to_array(spf::sf::positional_encoding(h, w, bands));
      },
      "h"_a, "w"_a, "bands"_a = 6);

  m.def(
      "softmax_masked",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& mask) {
        return to_array(spf::softmax_masked(from_array(x), from_array(mask)));
      },
      "x"_a, "mask"_a);

  m.def(
      "matmul",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        return to_array(spf::matmul(from_array(a), from_array(b)));
      },
      "a"_a, "b"_a);

  m.def(
      "generate_scene",
      [](std::int64_t height, std::int64_t width, double density, double outlier_rate,
         std::int64_t n_fixed, int n_planes, int n_boxes, double d_min, double d_max, double bias,
         std::uint64_t seed) {
        spf::scene::SceneConfig cfg;
        cfg.height = height;
        cfg.width = width;
        cfg.landmark_density = density;
        cfg.outlier_rate = outlier_rate;
        cfg.n_fixed = n_fixed;
        cfg.n_planes = n_planes;
        cfg.n_boxes = n_boxes;
        cfg.d_min = d_min;
        cfg.d_max = d_max;
        cfg.sampling_bias = bias;
        return scene_to_dict(spf::scene::generate_scene(cfg, seed));
      },
      "height"_a = 48, "width"_a = 64, "density"_a = 0.01, "outlier_rate"_a = 0.0,
      "n_fixed"_a = 40, "n_planes"_a = 3, "n_boxes"_a = 2, "d_min"_a = 0.5, "d_max"_a = 10.0,
      "bias"_a = 0.7, "seed"_a = 1);

  m.def(
      "read_scene",
      [](const std::string& path) { return scene_to_dict(spf::scene::read_scene(path)); },
      "path"_a);

  m.def(
      "compute_metrics",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& gt,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& valid) {
        auto r = spf::train::compute_metrics(from_array(pred), from_array(gt), from_array(valid));
        py::dict d;
        d["rel"] = r.rel;
        d["rmse"] = r.rmse;
        d["a1"] = r.a1;
        d["a2"] = r.a2;
        d["a3"] = r.a3;
        d["n_pixels"] = r.n_pixels;
        return d;
      },
      "pred"_a, "gt"_a, "valid"_a);

  m.def(
      "grad_check",
      [](const std::string& module, std::uint64_t seed) {
        spf::gradcheck::Report r;
        if (module == "tensor") r = spf::gradcheck::tensor_suite(seed);
        else if (module == "sparseformer") r = spf::gradcheck::sparseformer_suite(seed);
        else if (module == "model") r = spf::gradcheck::model_suite(seed);
        else spf::fail("unknown module: " + module);
        py::dict d;
        d["max_rel_err"] = r.max_rel_err;
        d["tol"] = r.tol;
        d["pass"] = r.pass();
        d["coords_checked"] = r.coords_checked;
        return d;
      },
      "module"_a, "seed"_a = 2024);

  py::class_<DepthModel>(m, "DepthModel")
      .def(py::init<const py::dict&, std::uint64_t>(), "config"_a = py::dict(), "seed"_a = 1)
      .def_static("load", [](const std::string& path) { return DepthModel(path); }, "path"_a)
      .def("forward", &DepthModel::forward, "image"_a, "uv"_a, "d_in"_a, "valid"_a)
      .def("loss", &DepthModel::loss, "image"_a, "uv"_a, "d_in"_a, "valid"_a, "gt_depth"_a,
           "gt_valid"_a)
      .def("save", &DepthModel::save, "path"_a)
      .def("param_count", &DepthModel::param_count)
      .def("config", &DepthModel::config);
}
