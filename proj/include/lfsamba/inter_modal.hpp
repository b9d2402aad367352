#pragma once

// Fusion between the all-focus stream F_0 and the aggregated slice stream
// F_slices: a basic conv-fused middle stream plus two cross scans that swap
// the output matrix C in a first stage and the scanned sequences in a second.

#include <utility>

#include "lfsamba/blocks.hpp"
#include "lfsamba/scan_geometry.hpp"

namespace lfsamba {

/// One modality stream of the cross scan.
struct CrossStreamParams {
  ConvStem stem;
  DirectionalScanParams stage1;
  DirectionalScanParams stage2;
  NormProjection head;

  static CrossStreamParams init(std::size_t channels, std::size_t states, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct InterModalParams {
  Tensor fuse_k;  // [d, 2d, 3, 3]
  Tensor fuse_b;  // [d]
  ConvStem mid_stem;
  DirectionalScanParams mid_scan;
  NormProjection mid_head;
  CrossStreamParams all_focus;
  CrossStreamParams slices;

  std::size_t channels() const { return fuse_b.numel(); }

  /// Fuse conv and every output projection start at zero, so F_fused = F_0 + F_slices at init.
  static InterModalParams init(std::size_t channels, std::size_t states, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Conv3x3 over the channel concatenation of both inputs.
Tensor fuse_basic(const Tensor& f0, const Tensor& f_slices, const InterModalParams& params);

/// Linear(LN(SS2D(SiLU(DWConv(Linear(P)))))).
Tensor middle_stream(const Tensor& p, const InterModalParams& params);

struct CrossScanOutputs {
  Tensor s2a;  // stage-2 output of the all-focus stream
  Tensor a2s;  // stage-2 output of the slices stream
};

/// Four-direction scan of x whose per-direction output matrix C comes from
/// the other stream's tokens (projected with that stream's W_C) at the same
/// scan position. Without exchange, C is projected from x itself.
Tensor exchanged_ss2d(const Tensor& x, const Tensor& other, const DirectionalScanParams& own,
                      const DirectionalScanParams& other_params, bool exchange = true);

/// Two-step cross scan. `exchange_c = false` disables the stage-1 C swap (ablation).
CrossScanOutputs cross_ss2d(const Tensor& x0, const Tensor& x_slices, const InterModalParams& params,
                            bool exchange_c = true);

struct InterModalOutputs {
  Tensor fused;         // F_fused
  Tensor all_focus;     // F̄_0
  Tensor slices;        // F̄_slices
  Tensor basic;         // P
  Tensor middle;        // P̄
};

InterModalOutputs inter_modal_parts(const Tensor& f0, const Tensor& f_slices, const InterModalParams& params);

inline Tensor inter_modal_fuse(const Tensor& f0, const Tensor& f_slices, const InterModalParams& params) {
  return inter_modal_parts(f0, f_slices, params).fused;
}

}  // namespace lfsamba
