#include "lfsamba/blocks.hpp"

#include <cmath>

#include "lfsamba/ops.hpp"

namespace lfsamba {

ConvStem ConvStem::init(std::size_t channels, Rng& rng) {
  ConvStem s;
  s.in_w = param_normal({channels, channels}, 1.0 / std::sqrt(static_cast<Real>(channels)), rng);
  s.in_b = param_zeros({channels});
  s.dw_k = param_uniform({channels, 1, 3, 3}, -1.0 / 3.0, 1.0 / 3.0, rng);
  s.dw_b = param_zeros({channels});
  return s;
}

ConvStem ConvStem::identity(std::size_t channels) {
  ConvStem s;
  std::vector<Real> eye(channels * channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) eye[c * channels + c] = 1.0;
  s.in_w = Tensor::parameter({channels, channels}, std::move(eye));
  s.in_b = param_zeros({channels});
  s.dw_k = param_identity_kernel(channels, 3, true);
  s.dw_b = param_zeros({channels});
  return s;
}

Tensor ConvStem::apply(const Tensor& x) const {
  return silu(conv2d(channel_linear(x, in_w, in_b), dw_k, dw_b, 1, true));
}

void ConvStem::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "in_w"), in_w);
  fn(join_name(prefix, "in_b"), in_b);
  fn(join_name(prefix, "dw_k"), dw_k);
  fn(join_name(prefix, "dw_b"), dw_b);
}

NormProjection NormProjection::zero_init(std::size_t channels) {
  return {param_full({channels}, 1.0), param_zeros({channels}), param_zeros({channels, channels}),
          param_zeros({channels})};
}

Tensor NormProjection::apply(const Tensor& x) const {
  return channel_linear(channel_layer_norm(x, gamma, beta), out_w, out_b);
}

void NormProjection::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "ln_gamma"), gamma);
  fn(join_name(prefix, "ln_beta"), beta);
  fn(join_name(prefix, "out_w"), out_w);
  fn(join_name(prefix, "out_b"), out_b);
}

}  // namespace lfsamba
