#include "dpt/gradcheck.hpp"

#include <cmath>

namespace dpt {

FdReport finite_diff_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double h) {
  for (const Tensor& p : params) {
    DPT_CHECK(p.requires_grad(), "finite_diff_check: all checked tensors need requires_grad");
    const_cast<Tensor&>(p).zero_grad();
  }
  Tensor loss = f();
  DPT_CHECK(loss.numel() == 1, "finite_diff_check: f must return a scalar");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : params) {
    DPT_CHECK(!p.impl()->grad.empty(),
              "finite_diff_check: no gradient reached a checked tensor (disconnected graph?)");
    analytic.emplace_back(p.impl()->grad.begin(), p.impl()->grad.end());
  }

  FdReport report;
  NoGradGuard ng;  // probe evaluations don't need a tape
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = const_cast<Tensor&>(params[pi]);
    double* pd = p.data();
    for (size_t j = 0; j < p.numel(); ++j) {
      double saved = pd[j];
      pd[j] = saved + h;
      double lp = f().item();
      pd[j] = saved - h;
      double lm = f().item();
      pd[j] = saved;
      double numeric = (lp - lm) / (2.0 * h);
      double a = analytic[pi][j];
      double rel = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.checked;
    }
  }
  return report;
}

FdReport finite_diff_check(const std::function<Tensor()>& f,
                           const std::vector<Parameter>& params, double h) {
  std::vector<Tensor> tensors;
  tensors.reserve(params.size());
  for (const Parameter& p : params) tensors.push_back(p.tensor);
  return finite_diff_check(f, tensors, h);
}

}  // namespace dpt
