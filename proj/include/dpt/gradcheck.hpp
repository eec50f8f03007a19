#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dpt/optim.hpp"
#include "dpt/tensor.hpp"

namespace dpt {

struct FdReport {
  double max_rel_err = 0.0;
  size_t checked = 0;
};

// Verifies reverse-mode gradients of a scalar-valued graph against central
// finite differences. `f` must rebuild the graph from the current values of
// `params` on every call (and be deterministic). Relative error uses
// |analytic - numeric| / max(1, |analytic|, |numeric|).
FdReport finite_diff_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double h = 1e-5);
FdReport finite_diff_check(const std::function<Tensor()>& f,
                           const std::vector<Parameter>& params, double h = 1e-5);

struct GradCheckCase {
  std::string op;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Exercises every differentiable op and composite layer at toy sizes plus a
// miniature end-to-end classification network. tol is the pass threshold.
std::vector<GradCheckCase> run_gradcheck_suite(uint64_t seed, double tol = 1e-4);

}  // namespace dpt
