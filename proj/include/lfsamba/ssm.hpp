#pragma once

// S6 selective scan: data-dependent (Δ, B, C) projection, zero-order-hold
// discretization of A, Euler discretization of B, and the linear recurrence
//
//   h_t = exp(Δ_t A) ⊙ h_{t-1} + Δ_t B_t u_t,   y_t = ⟨C_t, h_t⟩ + D ⊙ u_t,   h_0 = 0.

#include <cstddef>
#include <string>

#include "lfsamba/params.hpp"
#include "lfsamba/tensor.hpp"

namespace lfsamba {

/// Low-rank width of the Δ projection for d channels.
inline std::size_t dt_rank_for(std::size_t channels) { return channels / 16 > 1 ? channels / 16 : 1; }

struct SsmBlockParams {
  Tensor a_log;      // [d, N]; A = -exp(a_log)
  Tensor w_b;        // [N, d]
  Tensor w_c;        // [N, d]
  Tensor w_dt_down;  // [r, d]
  Tensor w_dt_up;    // [d, r]
  Tensor dt_bias;    // [d]
  Tensor d_skip;     // [d]

  std::size_t channels() const { return a_log.dim(0); }
  std::size_t states() const { return a_log.dim(1); }
  std::size_t dt_rank() const { return w_dt_down.dim(0); }

  /// A_log = ln(1..N) per channel, D = 1, softplus(dt_bias) uniform in [1e-3, 1e-1].
  static SsmBlockParams init(std::size_t channels, std::size_t states, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct ProjectedParams {
  Tensor delta;  // [T, d]
  Tensor b;      // [T, N]
  Tensor c;      // [T, N]
};

/// B_t = W_B u_t, C_t = W_C u_t, Δ_t = softplus(W_up W_down u_t + dt_bias).
ProjectedParams project_params(const Tensor& u, const SsmBlockParams& params);

/// A = -exp(a_log), differentiable in a_log.
Tensor state_matrix(const SsmBlockParams& params);

struct Discretized {
  Tensor a_bar;  // [T, d, N]
  Tensor b_bar;  // [T, d, N]
};

/// Ā = exp(Δ ⊗ A), B̄ = Δ ⊗ B. Values only; not recorded on the tape.
Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b);

/// Fused differentiable recurrence over explicit operands.
Tensor scan_core(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                 const Tensor& d_skip);

/// Full S6 block on u [T, d].
Tensor selective_scan(const Tensor& u, const SsmBlockParams& params);

/// S6 block whose output matrix C is supplied externally ([T, N]) instead of
/// being projected from u. Used by the cross-stream exchange.
Tensor selective_scan_with_output_matrix(const Tensor& u, const Tensor& c, const SsmBlockParams& params);

namespace reference {

/// Step-by-step loop over raw values; the oracle for selective_scan.
Tensor selective_scan_sequential(const Tensor& u, const SsmBlockParams& params);

/// Same loop with an external output matrix C [T, N].
Tensor selective_scan_sequential(const Tensor& u, const Tensor& c, const SsmBlockParams& params);

/// Hidden state h_T [d, N] after the last step of the same loop.
Tensor final_state_sequential(const Tensor& u, const SsmBlockParams& params);

}  // namespace reference

}  // namespace lfsamba
