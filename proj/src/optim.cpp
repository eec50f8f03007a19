#include "dpt/optim.hpp"

#include <cmath>

namespace dpt {

Adam::Adam(std::vector<Parameter>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(params[i].tensor.numel(), 0.0);
    v_[i].assign(params[i].tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (size_t i = 0; i < params_->size(); ++i) {
    Tensor& p = (*params_)[i].tensor;
    const DataVec& g = p.impl()->grad;
    double* pd = p.data();
    for (size_t j = 0; j < p.numel(); ++j) {
      double gj = j < g.size() ? g[j] : 0.0;
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gj;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      pd[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter& p : *params_) p.tensor.zero_grad();
}

}  // namespace dpt
