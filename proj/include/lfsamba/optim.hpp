#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lfsamba/tensor.hpp"

namespace lfsamba {

struct AdamConfig {
  Real lr = 1e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

/// Adaptive-moment optimizer over a fixed list of leaf parameters. Updated
/// values are rounded to storage precision.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  void step(const Gradients& grads);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<Real>> m_, v_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

}  // namespace lfsamba
