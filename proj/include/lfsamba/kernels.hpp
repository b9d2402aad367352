#pragma once

// Numeric kernels behind the differentiable operations.
//
// Every kernel exists twice: `serial` is the plain loop nest used as the
// reference in tests, `parallel` is the OpenMP version used by the ops.
// Both accumulate each output element in the same order, so their results
// are bitwise identical regardless of thread count.

#include <cstddef>
#include <span>

#include "lfsamba/tensor.hpp"

namespace lfsamba::kernels {

/// Geometry of a stride-1 2D cross-correlation with symmetric zero padding.
struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;  // input
  std::size_t width = 0;
  std::size_t kernel = 0;
  std::size_t padding = 0;
  bool depthwise = false;

  std::size_t out_height() const { return height + 2 * padding - kernel + 1; }
  std::size_t out_width() const { return width + 2 * padding - kernel + 1; }
  std::size_t kernel_in_channels() const { return depthwise ? 1 : in_channels; }
};

/// Shapes of one selective-scan problem: T steps, d channels, N states.
struct ScanGeometry {
  std::size_t steps = 0;
  std::size_t channels = 0;
  std::size_t states = 0;
};

/// Inputs of the discretized recurrence
///   h_t = exp(delta_t * A) h_{t-1} + delta_t * B_t * u_t,  y_t = <C_t, h_t> + D * u_t.
struct ScanOperands {
  std::span<const Real> u;      // [T, d]
  std::span<const Real> delta;  // [T, d]
  std::span<const Real> a;      // [d, N]
  std::span<const Real> b;      // [T, N]
  std::span<const Real> c;      // [T, N]
  std::span<const Real> skip;   // [d]
};

struct ScanGradients {
  std::span<Real> u, delta, a, b, c, skip;  // same layouts as ScanOperands; empty spans are skipped
};

#define LFSAMBA_KERNEL_DECLS                                                                                      \
  /* y[r,o] = bias[o] + sum_k x[r,k] w[o,k]; bias may be empty */                                                 \
  void linear_forward(std::span<const Real> x, std::span<const Real> w, std::span<const Real> bias,               \
                      std::size_t rows, std::size_t in, std::size_t out, std::span<Real> y);                      \
  /* dx[r,k] += sum_o gy[r,o] w[o,k] */                                                                           \
  void linear_backward_input(std::span<const Real> gy, std::span<const Real> w, std::size_t rows, std::size_t in, \
                             std::size_t out, std::span<Real> dx);                                                \
  /* dw[o,k] += sum_r gy[r,o] x[r,k] */                                                                           \
  void linear_backward_weight(std::span<const Real> gy, std::span<const Real> x, std::size_t rows,                \
                              std::size_t in, std::size_t out, std::span<Real> dw);                               \
  void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> k,                    \
                      std::span<const Real> bias, std::span<Real> y);                                             \
  void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> gy, std::span<const Real> k,            \
                             std::span<Real> dx);                                                                 \
  void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> gy, std::span<const Real> x,           \
                              std::span<Real> dk);                                                                \
  /* y[T,d]; states receives h laid out [d, T, N] when non-empty */                                               \
  void scan_forward(const ScanGeometry& g, const ScanOperands& in, std::span<Real> y, std::span<Real> states);     \
  /* accumulates into every non-empty gradient span; states from scan_forward */                                  \
  void scan_backward(const ScanGeometry& g, const ScanOperands& in, std::span<const Real> states,                 \
                     std::span<const Real> gy, const ScanGradients& grads);

namespace serial {
LFSAMBA_KERNEL_DECLS
}  // namespace serial

namespace parallel {
LFSAMBA_KERNEL_DECLS
}  // namespace parallel

#undef LFSAMBA_KERNEL_DECLS

/// Worker threads used by the parallel kernels.
int thread_count();

}  // namespace lfsamba::kernels
