#pragma once

// Small parameterized pieces shared by the fusion blocks.

#include <cstddef>
#include <string>

#include "lfsamba/params.hpp"
#include "lfsamba/tensor.hpp"

namespace lfsamba {

/// SiLU(DWConv3x3(Linear(x))) over a [d,h,w] map, the Linear acting per token.
struct ConvStem {
  Tensor in_w;  // [d, d]
  Tensor in_b;  // [d]
  Tensor dw_k;  // [d, 1, 3, 3]
  Tensor dw_b;  // [d]

  static ConvStem init(std::size_t channels, Rng& rng);
  /// Linear = identity, DWConv = center tap, zero biases.
  static ConvStem identity(std::size_t channels);
  Tensor apply(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Linear(LN_channels(x)) over a [d,h,w] map.
struct NormProjection {
  Tensor gamma, beta;  // [d]
  Tensor out_w;        // [d, d]
  Tensor out_b;        // [d]

  /// gamma = 1, beta = 0, zero projection: the block contributes nothing at init.
  static NormProjection zero_init(std::size_t channels);
  Tensor apply(const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

}  // namespace lfsamba
