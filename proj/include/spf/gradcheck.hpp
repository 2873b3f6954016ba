#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spf/tensor.hpp"

namespace spf::gradcheck {

struct Report {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 0.0;
  std::int64_t coords_checked = 0;
  bool pass() const { return max_rel_err <= tol; }
};

// Central finite differences against the tape gradient, every coordinate of x.
// f must be scalar-valued and build its graph on the tape of its argument.
// Relative error uses denominator max(|analytic|, |fd|, 1e-3).
Report grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-5, double tol = 1e-5);

// Multi-input variant; checks every coordinate of every input.
Report grad_check_multi(const std::string& name,
                        const std::function<Tensor(const std::vector<Tensor>&)>& f,
                        const std::vector<Tensor>& inputs, double eps = 1e-5, double tol = 1e-5);

// Finite-difference sweeps over the ops / the full block / the micro model.
// Tolerances are fixed: 1e-5, 1e-4, 1e-3.
Report tensor_suite(std::uint64_t seed);
Report sparseformer_suite(std::uint64_t seed);
Report model_suite(std::uint64_t seed);

}  // namespace spf::gradcheck
