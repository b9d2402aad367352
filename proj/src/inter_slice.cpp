#include "lfsamba/inter_slice.hpp"

#include <cmath>

#include "lfsamba/errors.hpp"
#include "lfsamba/ops.hpp"

namespace lfsamba {

InterSliceParams InterSliceParams::init(std::size_t channels, std::size_t states, Rng& rng) {
  InterSliceParams p;
  p.stem = ConvStem::init(channels, rng);
  p.scan = DirectionalScanParams::init(channels, states, rng);
  p.ln_gamma = param_full({channels}, 1.0);
  p.ln_beta = param_zeros({channels});
  p.gate_w = param_normal({channels, channels}, 1.0 / std::sqrt(static_cast<Real>(channels)), rng);
  p.gate_b = param_zeros({channels});
  p.out_w = param_zeros({channels, channels});
  p.out_b = param_zeros({channels});
  return p;
}

void InterSliceParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  stem.visit(join_name(prefix, "stem"), fn);
  scan.visit(join_name(prefix, "fss2d"), fn);
  fn(join_name(prefix, "ln_gamma"), ln_gamma);
  fn(join_name(prefix, "ln_beta"), ln_beta);
  fn(join_name(prefix, "gate_w"), gate_w);
  fn(join_name(prefix, "gate_b"), gate_b);
  fn(join_name(prefix, "out_w"), out_w);
  fn(join_name(prefix, "out_b"), out_b);
}

Tensor slice_stem(const Tensor& feature, const InterSliceParams& params) { return params.stem.apply(feature); }

Tensor gated_residual(const Tensor& feature, const Tensor& scanned, const InterSliceParams& params) {
  const Tensor gate = silu(channel_linear(feature, params.gate_w, params.gate_b));
  const Tensor mixed = mul(channel_layer_norm(scanned, params.ln_gamma, params.ln_beta), gate);
  return add(feature, channel_linear(mixed, params.out_w, params.out_b));
}

Tensor inter_slice_fuse(const std::vector<Tensor>& features, const InterSliceParams& params) {
  if (features.empty()) throw ContractError("inter_slice_fuse: empty slice list");
  std::vector<Tensor> stems;
  stems.reserve(features.size());
  for (const auto& f : features) stems.push_back(slice_stem(f, params));
  const std::vector<Tensor> scanned = fss2d(stems, params.scan);
  std::vector<Tensor> residuals;
  residuals.reserve(features.size());
  for (std::size_t k = 0; k < features.size(); ++k) residuals.push_back(gated_residual(features[k], scanned[k], params));
  return mean_axis0(combine(residuals, CombineMode::stack_new_axis));
}

}  // namespace lfsamba
