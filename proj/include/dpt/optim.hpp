#pragma once

#include <string>
#include <vector>

#include "dpt/tensor.hpp"

namespace dpt {

// Named learnable tensor. Copies share the underlying buffer, so a network's
// parameter registry and its layers always see the same values and gradients.
struct Parameter {
  std::string name;
  Tensor tensor;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters without an accumulated gradient are
// treated as having zero gradient for that step.
class Adam {
 public:
  explicit Adam(std::vector<Parameter>& params, AdamConfig cfg = {});

  void step();
  void zero_grad();
  int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter>* params_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace dpt
