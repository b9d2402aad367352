#include "lfsamba/params.hpp"

#include "lfsamba/errors.hpp"

namespace lfsamba {

Tensor param_zeros(Shape shape) { return param_full(std::move(shape), 0.0); }

Tensor param_full(Shape shape, Real value) {
  const auto n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<Real>(n, storage_round(value)));
}

Tensor param_normal(Shape shape, Real stddev, Rng& rng) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = storage_round(rng.normal(0.0, stddev));
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor param_uniform(Shape shape, Real lo, Real hi, Rng& rng) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = storage_round(rng.uniform(lo, hi));
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor param_identity_kernel(std::size_t channels, std::size_t k, bool depthwise) {
  const std::size_t kin = depthwise ? 1 : channels;
  std::vector<Real> v(channels * kin * k * k, 0.0);
  const std::size_t mid = k / 2;
  for (std::size_t c = 0; c < channels; ++c) {
    const std::size_t ci = depthwise ? 0 : c;
    v[((c * kin + ci) * k + mid) * k + mid] = 1.0;
  }
  return Tensor::parameter({channels, kin, k, k}, std::move(v));
}

void assign_rounded(Tensor& param, std::span<const Real> values) {
  auto dst = param.mutable_data();
  if (dst.size() != values.size()) {
    throw DimensionError("assign: " + std::to_string(values.size()) + " values for tensor of shape " +
                         shape_str(param.shape()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = storage_round(values[i]);
}

}  // namespace lfsamba
