#pragma once

#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "lfsamba/ops.hpp"
#include "lfsamba/params.hpp"
#include "lfsamba/tensor.hpp"

namespace lfsamba::test {

inline std::vector<Real> random_values(std::size_t n, std::uint64_t seed, Real lo = -1.0, Real hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> dist(lo, hi);
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, Real lo = -1.0, Real hi = 1.0) {
  const auto n = shape_numel(shape);
  return Tensor::from(std::move(shape), random_values(n, seed, lo, hi));
}

inline Tensor random_param(Shape shape, std::uint64_t seed, Real lo = -1.0, Real hi = 1.0) {
  const auto n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), random_values(n, seed, lo, hi));
}

/// Overwrites every entry of a parameter with fresh random values.
inline void randomize(Tensor& t, std::uint64_t seed, Real lo = -1.0, Real hi = 1.0) {
  auto v = random_values(t.numel(), seed, lo, hi);
  auto dst = t.mutable_data();
  std::copy(v.begin(), v.end(), dst.begin());
}

/// Owning copy of a tensor's values; safe to iterate when the tensor is a temporary.
inline std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// Randomizes every tensor a parameter bundle visits, seeding each by position.
template <typename Params>
void randomize_all(Params& params, std::uint64_t seed, Real half_width = 0.5) {
  std::uint64_t i = 0;
  params.visit("", [&](const std::string&, Tensor& t) { randomize(t, seed * 7919 + i++, -half_width, half_width); });
}

/// Collects every tensor a parameter bundle visits.
template <typename Params>
std::vector<Tensor> collect(Params& params) {
  std::vector<Tensor> out;
  params.visit("", [&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(Real)) != 0) return false;
  }
  return true;
}

inline Real max_abs_diff(const Tensor& a, const Tensor& b) {
  Real m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Real max_rel_diff(const Tensor& a, const Tensor& b, Real floor = 1e-12) {
  Real m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const Real s = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    m = std::max(m, std::abs(a[i] - b[i]) / s);
  }
  return m;
}

/// Scalar probe loss: weighted sum with fixed pseudo-random weights so that
/// every output entry contributes a distinct gradient.
inline Tensor probe_loss(const Tensor& y, std::uint64_t seed = 99) {
  const Tensor w = random_tensor(y.shape(), seed);
  return sum(mul(y, w));
}

}  // namespace lfsamba::test
