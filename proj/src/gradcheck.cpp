#include "spf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "spf/rng.hpp"
#include "spf/tensor.hpp"

namespace spf::gradcheck {

namespace {

double rel_err(double analytic, double fd) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3});
  return std::abs(analytic - fd) / denom;
}

}  // namespace

Report grad_check_multi(const std::string& name,
                        const std::function<Tensor(const std::vector<Tensor>&)>& f,
                        const std::vector<Tensor>& inputs, double eps, double tol) {
  Tape tape;
  std::vector<Tensor> watched;
  watched.reserve(inputs.size());
  for (const Tensor& t : inputs) watched.push_back(tape.watch(t));
  Tensor y = f(watched);
  check(y.size() == 1, "grad_check: function must be scalar-valued");
  check(std::isfinite(y.value()), "grad_check: non-finite function value");
  tape.backward(y);

  Report rep;
  rep.name = name;
  rep.tol = tol;
  for (size_t which = 0; which < inputs.size(); ++which) {
    const Tensor analytic = tape.grad(watched[which]);
    for (std::int64_t i = 0; i < inputs[which].size(); ++i) {
      auto perturbed = [&](double delta) {
        std::vector<Tensor> alt = inputs;
        std::vector<double> vals(inputs[which].data().begin(), inputs[which].data().end());
        vals[static_cast<size_t>(i)] += delta;
        alt[which] = Tensor(inputs[which].shape(), std::move(vals));
        return f(alt).value();
      };
      const double fd = (perturbed(eps) - perturbed(-eps)) / (2.0 * eps);
      rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic.at(i), fd));
      ++rep.coords_checked;
    }
  }
  return rep;
}

Report grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps,
                  double tol) {
  return grad_check_multi(
      "grad_check", [&f](const std::vector<Tensor>& in) { return f(in[0]); }, {x}, eps, tol);
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::vector<double> vals(static_cast<size_t>(shape_numel(shape)));
  for (double& v : vals) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(vals));
}

// Random strictly positive tensor, bounded away from zero.
Tensor random_positive(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<double> vals(static_cast<size_t>(shape_numel(shape)));
  for (double& v : vals) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(vals));
}

// Values kept away from the relu/l1 kinks so central differences are valid.
Tensor random_off_kink(Rng& rng, Shape shape, double margin = 0.05) {
  std::vector<double> vals(static_cast<size_t>(shape_numel(shape)));
  for (double& v : vals) {
    double x = rng.uniform(-2.0, 2.0);
    if (std::abs(x) < margin) x = x < 0.0 ? x - margin : x + margin;
    v = x;
  }
  return Tensor(std::move(shape), std::move(vals));
}

Tensor random_mask(Rng& rng, Shape shape, double keep_prob) {
  std::vector<double> vals(static_cast<size_t>(shape_numel(shape)));
  for (double& v : vals) v = rng.uniform() < keep_prob ? 1.0 : 0.0;
  return Tensor(std::move(shape), std::move(vals));
}

void merge(Report& total, const Report& r) {
  total.max_rel_err = std::max(total.max_rel_err, r.max_rel_err);
  total.coords_checked += r.coords_checked;
}

}  // namespace

Report tensor_suite(std::uint64_t seed) {
  Report total;
  total.name = "tensor";
  total.tol = 1e-5;
  Rng rng(seed, /*stream=*/101);
  constexpr int kTrials = 20;

  for (int t = 0; t < kTrials; ++t) {
    const std::int64_t m = rng.uniform_int(1, 5);
    const std::int64_t k = rng.uniform_int(1, 5);
    const std::int64_t n = rng.uniform_int(1, 5);

    // matmul / matmul_nt; a fixed random projection makes the gradient non-uniform
    {
      Tensor a = random_tensor(rng, {m, k});
      Tensor b = random_tensor(rng, {k, n});
      Tensor r = random_tensor(rng, {m, n});
      merge(total, grad_check_multi(
                       "matmul",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(matmul(in[0], in[1]), r));
                       },
                       {a, b}));
      Tensor bt = random_tensor(rng, {n, k});
      merge(total, grad_check_multi(
                       "matmul_nt",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(matmul_nt(in[0], in[1]), r));
                       },
                       {a, bt}));
    }
    // add / sub / mul with trailing broadcast
    {
      Tensor a = random_tensor(rng, {m, n});
      Tensor b = random_tensor(rng, {n});
      Tensor r = random_tensor(rng, {m, n});
      merge(total, grad_check_multi(
                       "add",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(add(in[0], in[1]), r));
                       },
                       {a, b}));
      merge(total, grad_check_multi(
                       "sub",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(sub(in[0], in[1]), r));
                       },
                       {a, b}));
      merge(total, grad_check_multi(
                       "mul",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(mul(in[0], in[1]), r));
                       },
                       {a, b}));
    }
    // relu / softplus / scale
    {
      Tensor a = random_off_kink(rng, {m, n});
      Tensor r = random_tensor(rng, {m, n});
      merge(total, grad_check_multi(
                       "relu",
                       [&](const std::vector<Tensor>& in) { return mean_all(mul(relu(in[0]), r)); },
                       {a}));
      merge(total,
            grad_check_multi(
                "softplus",
                [&](const std::vector<Tensor>& in) { return mean_all(mul(softplus(in[0]), r)); },
                {a}));
      merge(total, grad_check_multi(
                       "scale",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(scale(in[0], 1.7), r));
                       },
                       {a}));
    }
    // softmax_masked
    {
      Tensor x = random_tensor(rng, {m, n});
      Tensor mask = random_mask(rng, {n}, 0.7);
      bool any = false;
      for (double v : mask.data()) any = any || v != 0.0;
      if (!any) mask = Tensor::full({n}, 1.0);
      Tensor r = random_tensor(rng, {m, n});
      merge(total, grad_check_multi(
                       "softmax_masked",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(softmax_masked(in[0], mask), r));
                       },
                       {x}));
    }
    // gather_rows / mask_rows
    {
      Tensor x = random_tensor(rng, {m, n});
      std::vector<std::int64_t> idx;
      for (int i = 0; i < 4; ++i) idx.push_back(rng.uniform_int(0, m - 1));
      Tensor r = random_tensor(rng, {static_cast<std::int64_t>(idx.size()), n});
      merge(total, grad_check_multi(
                       "gather_rows",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(gather_rows(in[0], idx), r));
                       },
                       {x}));
      Tensor keep = random_mask(rng, {m}, 0.6);
      Tensor rm = random_tensor(rng, {m, n});
      merge(total, grad_check_multi(
                       "mask_rows",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(mask_rows(in[0], keep), rm));
                       },
                       {x}));
    }
    // concat / slice / reshape
    {
      Tensor a = random_tensor(rng, {m, n});
      Tensor b = random_tensor(rng, {m, k});
      Tensor r = random_tensor(rng, {m, n + k});
      merge(total, grad_check_multi(
                       "concat",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(concat({in[0], in[1]}, 1), r));
                       },
                       {a, b}));
      if (n >= 2) {
        Tensor rs = random_tensor(rng, {m, n - 1});
        merge(total, grad_check_multi(
                         "slice_cols",
                         [&](const std::vector<Tensor>& in) {
                           return mean_all(mul(slice_cols(in[0], 1, n), rs));
                         },
                         {a}));
      }
      Tensor rr = random_tensor(rng, {m * n});
      merge(total, grad_check_multi(
                       "reshape",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(reshape(in[0], {m * n}), rr));
                       },
                       {a}));
    }
    // layer_norm
    {
      const std::int64_t d = rng.uniform_int(2, 6);
      Tensor x = random_tensor(rng, {m, d});
      Tensor gm = random_tensor(rng, {d}, 0.5, 1.5);
      Tensor bt = random_tensor(rng, {d}, -0.5, 0.5);
      Tensor r = random_tensor(rng, {m, d});
      merge(total, grad_check_multi(
                       "layer_norm",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(layer_norm(in[0], in[1], in[2]), r));
                       },
                       {x, gm, bt}));
    }
    // conv2d over kernel/stride combinations
    {
      const std::int64_t H = rng.uniform_int(3, 6);
      const std::int64_t W = rng.uniform_int(3, 6);
      const std::int64_t ci = rng.uniform_int(1, 3);
      const std::int64_t co = rng.uniform_int(1, 3);
      const int kernel = (t % 2 == 0) ? 3 : 1;
      const int stride = (t % 4 < 2) ? 1 : 2;
      Tensor x = random_tensor(rng, {H, W, ci});
      Tensor w = random_tensor(rng, {kernel, kernel, ci, co});
      Tensor b = random_tensor(rng, {co});
      merge(total, grad_check_multi(
                       "conv2d",
                       [&](const std::vector<Tensor>& in) {
                         Tensor y = conv2d(in[0], in[1], in[2], kernel, stride);
                         return mean_all(mul(y, Tensor::full(y.shape(), 0.7)));
                       },
                       {x, w, b}));
    }
    // upsample / reductions / losses
    {
      const std::int64_t H = rng.uniform_int(1, 3);
      const std::int64_t W = rng.uniform_int(1, 3);
      Tensor x = random_tensor(rng, {H, W, 2});
      Tensor r = random_tensor(rng, {2 * H, 2 * W, 2});
      merge(total, grad_check_multi(
                       "upsample_nearest2",
                       [&](const std::vector<Tensor>& in) {
                         return mean_all(mul(upsample_nearest2(in[0]), r));
                       },
                       {x}));
      Tensor a = random_tensor(rng, {m, n});
      merge(total,
            grad_check_multi(
                "sum", [&](const std::vector<Tensor>& in) { return sum_all(in[0]); }, {a}));
      merge(total,
            grad_check_multi(
                "mean", [&](const std::vector<Tensor>& in) { return mean_all(in[0]); }, {a}));

      Tensor pred = random_positive(rng, {m, n}, 0.5, 3.0);
      Tensor gt = random_positive(rng, {m, n}, 0.5, 3.0);
      // keep |pred-gt| away from the l1 kink
      {
        auto pv = pred.raw();
        for (std::int64_t i = 0; i < pred.size(); ++i) {
          if (std::abs(pv[i] - gt.at(i)) < 0.05) pv[i] += 0.1;
        }
      }
      Tensor valid = random_mask(rng, {m, n}, 0.8);
      bool any = false;
      for (double v : valid.data()) any = any || v != 0.0;
      if (!any) valid = Tensor::full({m, n}, 1.0);
      merge(total, grad_check_multi(
                       "l1_loss",
                       [&](const std::vector<Tensor>& in) {
                         return l1_loss(in[0], in[1], valid);
                       },
                       {pred, gt}));
      merge(total, grad_check_multi(
                       "l2_loss",
                       [&](const std::vector<Tensor>& in) {
                         return l2_loss(in[0], in[1], valid);
                       },
                       {pred, gt}));
    }
  }
  return total;
}

}  // namespace spf::gradcheck
