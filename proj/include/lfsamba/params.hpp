#pragma once

// Parameter construction and traversal shared by every model block.

#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "lfsamba/tensor.hpp"

namespace lfsamba {

/// Visits (hierarchical name, tensor) pairs in a stable order.
using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor)>;

/// Parameters are stored at 32-bit precision so checkpoints round-trip bitwise.
inline Real storage_round(Real v) { return static_cast<Real>(static_cast<float>(v)); }

/// Seeded generator for parameter initialization and data synthesis.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Real uniform(Real lo, Real hi) { return std::uniform_real_distribution<Real>(lo, hi)(engine_); }
  Real normal(Real mean = 0.0, Real stddev = 1.0) { return std::normal_distribution<Real>(mean, stddev)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

Tensor param_zeros(Shape shape);
Tensor param_full(Shape shape, Real value);
Tensor param_normal(Shape shape, Real stddev, Rng& rng);
Tensor param_uniform(Shape shape, Real lo, Real hi, Rng& rng);
/// [C_out, C_in, k, k] kernel that copies channel c to c (C_out == C_in), or [C,1,k,k] when depthwise.
Tensor param_identity_kernel(std::size_t channels, std::size_t k, bool depthwise);

/// Copies values into a leaf parameter, rounding to storage precision.
void assign_rounded(Tensor& param, std::span<const Real> values);

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

}  // namespace lfsamba
