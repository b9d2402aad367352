#pragma once

// Fusion across the K focal slices of one stack.
//
//   P_k = SiLU(DWConv(Linear(F_k)))
//   {Q_k} = FSS2D({P_k})
//   R_k = F_k + Linear_out(LN(Q_k) ⊙ SiLU(Linear_gate(F_k)))
//   F_slices = mean_k R_k

#include <vector>

#include "lfsamba/blocks.hpp"
#include "lfsamba/scan_geometry.hpp"

namespace lfsamba {

struct InterSliceParams {
  ConvStem stem;
  DirectionalScanParams scan;
  Tensor ln_gamma, ln_beta;  // [d]
  Tensor gate_w, gate_b;     // [d,d], [d]
  Tensor out_w, out_b;       // [d,d], [d]; zero at init so R_k = F_k

  std::size_t channels() const { return ln_gamma.numel(); }

  static InterSliceParams init(std::size_t channels, std::size_t states, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

Tensor slice_stem(const Tensor& feature, const InterSliceParams& params);

/// Gated residual R_k for one slice, given its feature F_k and scan output Q_k.
Tensor gated_residual(const Tensor& feature, const Tensor& scanned, const InterSliceParams& params);

Tensor inter_slice_fuse(const std::vector<Tensor>& features, const InterSliceParams& params);

}  // namespace lfsamba
