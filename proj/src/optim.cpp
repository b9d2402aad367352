#include "lfsamba/optim.hpp"

#include <cmath>

#include "lfsamba/errors.hpp"
#include "lfsamba/params.hpp"

namespace lfsamba {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0) || !(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
      !(config_.beta2 >= 0.0 && config_.beta2 < 1.0) || !(config_.eps > 0.0)) {
    throw ConfigError("adam: lr and eps must be positive, betas in [0,1)");
  }
  for (const auto& p : params_) {
    if (!p.is_leaf() || !p.requires_grad()) throw ContractError("adam: parameters must be trainable leaves");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(const Gradients& grads) {
  ++t_;
  const Real c1 = 1.0 - std::pow(config_.beta1, static_cast<Real>(t_));
  const Real c2 = 1.0 - std::pow(config_.beta2, static_cast<Real>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!grads.contains(params_[i])) {
      // unreached parameter: zero gradient still decays the moments
      for (std::size_t j = 0; j < m_[i].size(); ++j) {
        m_[i][j] *= config_.beta1;
        v_[i][j] *= config_.beta2;
      }
    }
    const Tensor g = grads.get(params_[i]);
    auto w = params_[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const bool reached = grads.contains(params_[i]);
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (reached) {
        const Real gj = g[j];
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      }
      const Real update = config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
      w[j] = storage_round(w[j] - update);
    }
  }
}

}  // namespace lfsamba
