#include "lfsamba/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lfsamba::kernels {

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

using Index = std::ptrdiff_t;

// Valid output range [lo, hi) for an input offset so that 0 <= o + off < n_in.
inline void clip_range(Index off, Index n_in, Index n_out, Index& lo, Index& hi) {
  lo = std::max<Index>(0, -off);
  hi = std::min<Index>(n_out, n_in - off);
  if (hi < lo) hi = lo;
}

inline std::size_t kernel_index(const ConvGeometry& g, std::size_t co, std::size_t ci, std::size_t ky,
                                std::size_t kx) {
  const std::size_t kin = g.kernel_in_channels();
  const std::size_t cik = g.depthwise ? 0 : ci;
  return ((co * kin + cik) * g.kernel + ky) * g.kernel + kx;
}

// One channel of the recurrence; shared by both variants.
void scan_forward_channel(const ScanGeometry& g, const ScanOperands& in, std::size_t c, std::span<Real> y,
                          Real* states, Real* h) {
  const std::size_t T = g.steps, d = g.channels, N = g.states;
  std::fill(h, h + N, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const Real dt = in.delta[t * d + c];
    const Real ut = in.u[t * d + c];
    Real acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const Real abar = std::exp(dt * in.a[c * N + n]);
      h[n] = abar * h[n] + dt * in.b[t * N + n] * ut;
      acc += in.c[t * N + n] * h[n];
    }
    y[t * d + c] = acc + in.skip[c] * ut;
    if (states != nullptr) std::copy(h, h + N, states + (c * T + t) * N);
  }
}

// Reverse sweep of one channel. Per-channel contributions to the shared B and
// C gradients go to db_c / dc_c ([T, N]) and are reduced later in channel order.
void scan_backward_channel(const ScanGeometry& g, const ScanOperands& in, std::span<const Real> states,
                           std::span<const Real> gy, const ScanGradients& out, std::size_t c, Real* db_c,
                           Real* dc_c, Real* carry) {
  const std::size_t T = g.steps, d = g.channels, N = g.states;
  std::fill(carry, carry + N, 0.0);
  Real dskip = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    const Real gt = gy[t * d + c];
    const Real dt = in.delta[t * d + c];
    const Real ut = in.u[t * d + c];
    const Real* h = states.data() + (c * T + t) * N;
    const Real* hprev = t > 0 ? states.data() + (c * T + t - 1) * N : nullptr;
    dskip += gt * ut;
    Real du = gt * in.skip[c];
    Real ddelta = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const Real an = in.a[c * N + n];
      const Real bn = in.b[t * N + n];
      const Real abar = std::exp(dt * an);
      const Real hp = hprev != nullptr ? hprev[n] : 0.0;
      const Real gh = carry[n] + in.c[t * N + n] * gt;
      dc_c[t * N + n] = gt * h[n];
      db_c[t * N + n] = gh * dt * ut;
      ddelta += gh * (an * abar * hp + bn * ut);
      if (!out.a.empty()) out.a[c * N + n] += gh * dt * abar * hp;
      du += gh * dt * bn;
      carry[n] = gh * abar;
    }
    if (!out.u.empty()) out.u[t * d + c] += du;
    if (!out.delta.empty()) out.delta[t * d + c] += ddelta;
  }
  if (!out.skip.empty()) out.skip[c] += dskip;
}

void reduce_channel_partials(const ScanGeometry& g, const std::vector<Real>& db_parts,
                             const std::vector<Real>& dc_parts, const ScanGradients& out) {
  const std::size_t TN = g.steps * g.states;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const Real* db = db_parts.data() + c * TN;
    const Real* dc = dc_parts.data() + c * TN;
    if (!out.b.empty()) {
      for (std::size_t i = 0; i < TN; ++i) out.b[i] += db[i];
    }
    if (!out.c.empty()) {
      for (std::size_t i = 0; i < TN; ++i) out.c[i] += dc[i];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// serial reference

namespace serial {

void linear_forward(std::span<const Real> x, std::span<const Real> w, std::span<const Real> bias, std::size_t rows,
                    std::size_t in, std::size_t out, std::span<Real> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      Real acc = bias.empty() ? 0.0 : bias[o];
      for (std::size_t k = 0; k < in; ++k) acc += x[r * in + k] * w[o * in + k];
      y[r * out + o] = acc;
    }
  }
}

void linear_backward_input(std::span<const Real> gy, std::span<const Real> w, std::size_t rows, std::size_t in,
                           std::size_t out, std::span<Real> dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < in; ++k) {
      Real acc = dx[r * in + k];
      for (std::size_t o = 0; o < out; ++o) acc += gy[r * out + o] * w[o * in + k];
      dx[r * in + k] = acc;
    }
  }
}

void linear_backward_weight(std::span<const Real> gy, std::span<const Real> x, std::size_t rows, std::size_t in,
                            std::size_t out, std::span<Real> dw) {
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t k = 0; k < in; ++k) {
      Real acc = dw[o * in + k];
      for (std::size_t r = 0; r < rows; ++r) acc += gy[r * out + o] * x[r * in + k];
      dw[o * in + k] = acc;
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> k,
                    std::span<const Real> bias, std::span<Real> y) {
  const auto H = static_cast<Index>(g.height), W = static_cast<Index>(g.width);
  const auto OH = static_cast<Index>(g.out_height()), OW = static_cast<Index>(g.out_width());
  const auto P = static_cast<Index>(g.padding), K = static_cast<Index>(g.kernel);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (Index oy = 0; oy < OH; ++oy) {
      for (Index ox = 0; ox < OW; ++ox) {
        Real acc = bias.empty() ? 0.0 : bias[co];
        const std::size_t ci_lo = g.depthwise ? co : 0;
        const std::size_t ci_hi = g.depthwise ? co + 1 : g.in_channels;
        for (std::size_t ci = ci_lo; ci < ci_hi; ++ci) {
          for (Index ky = 0; ky < K; ++ky) {
            const Index iy = oy + ky - P;
            if (iy < 0 || iy >= H) continue;
            for (Index kx = 0; kx < K; ++kx) {
              const Index ix = ox + kx - P;
              if (ix < 0 || ix >= W) continue;
              acc += k[kernel_index(g, co, ci, ky, kx)] * x[(ci * H + iy) * W + ix];
            }
          }
        }
        y[(co * OH + oy) * OW + ox] = acc;
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> gy, std::span<const Real> k,
                           std::span<Real> dx) {
  const auto H = static_cast<Index>(g.height), W = static_cast<Index>(g.width);
  const auto OH = static_cast<Index>(g.out_height()), OW = static_cast<Index>(g.out_width());
  const auto P = static_cast<Index>(g.padding), K = static_cast<Index>(g.kernel);
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (Index iy = 0; iy < H; ++iy) {
      for (Index ix = 0; ix < W; ++ix) {
        Real acc = dx[(ci * H + iy) * W + ix];
        const std::size_t co_lo = g.depthwise ? ci : 0;
        const std::size_t co_hi = g.depthwise ? ci + 1 : g.out_channels;
        for (std::size_t co = co_lo; co < co_hi; ++co) {
          for (Index ky = 0; ky < K; ++ky) {
            const Index oy = iy - ky + P;
            if (oy < 0 || oy >= OH) continue;
            for (Index kx = 0; kx < K; ++kx) {
              const Index ox = ix - kx + P;
              if (ox < 0 || ox >= OW) continue;
              acc += k[kernel_index(g, co, ci, ky, kx)] * gy[(co * OH + oy) * OW + ox];
            }
          }
        }
        dx[(ci * H + iy) * W + ix] = acc;
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> gy, std::span<const Real> x,
                            std::span<Real> dk) {
  const auto H = static_cast<Index>(g.height), W = static_cast<Index>(g.width);
  const auto OH = static_cast<Index>(g.out_height()), OW = static_cast<Index>(g.out_width());
  const auto P = static_cast<Index>(g.padding), K = static_cast<Index>(g.kernel);
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    const std::size_t ci_lo = g.depthwise ? co : 0;
    const std::size_t ci_hi = g.depthwise ? co + 1 : g.in_channels;
    for (std::size_t ci = ci_lo; ci < ci_hi; ++ci) {
      for (Index ky = 0; ky < K; ++ky) {
        for (Index kx = 0; kx < K; ++kx) {
          Real acc = dk[kernel_index(g, co, ci, ky, kx)];
          for (Index oy = 0; oy < OH; ++oy) {
            const Index iy = oy + ky - P;
            if (iy < 0 || iy >= H) continue;
            for (Index ox = 0; ox < OW; ++ox) {
              const Index ix = ox + kx - P;
              if (ix < 0 || ix >= W) continue;
              acc += gy[(co * OH + oy) * OW + ox] * x[(ci * H + iy) * W + ix];
            }
          }
          dk[kernel_index(g, co, ci, ky, kx)] = acc;
        }
      }
    }
  }
}

void scan_forward(const ScanGeometry& g, const ScanOperands& in, std::span<Real> y, std::span<Real> states) {
  std::vector<Real> h(g.states);
  for (std::size_t c = 0; c < g.channels; ++c) {
    scan_forward_channel(g, in, c, y, states.empty() ? nullptr : states.data(), h.data());
  }
}

void scan_backward(const ScanGeometry& g, const ScanOperands& in, std::span<const Real> states,
                   std::span<const Real> gy, const ScanGradients& grads) {
  const std::size_t TN = g.steps * g.states;
  std::vector<Real> db(g.channels * TN), dc(g.channels * TN), carry(g.states);
  for (std::size_t c = 0; c < g.channels; ++c) {
    scan_backward_channel(g, in, states, gy, grads, c, db.data() + c * TN, dc.data() + c * TN, carry.data());
  }
  reduce_channel_partials(g, db, dc, grads);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP

namespace parallel {

void linear_forward(std::span<const Real> x, std::span<const Real> w, std::span<const Real> bias, std::size_t rows,
                    std::size_t in, std::size_t out, std::span<Real> y) {
  std::vector<Real> wt(in * out);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t k = 0; k < in; ++k) wt[k * out + o] = w[o * in + k];
  }
  const auto n_rows = static_cast<Index>(rows);
#pragma omp parallel for schedule(static) if (rows * in * out > 32768)
  for (Index r = 0; r < n_rows; ++r) {
    Real* yr = y.data() + r * static_cast<Index>(out);
    const Real* xr = x.data() + r * static_cast<Index>(in);
    for (std::size_t o = 0; o < out; ++o) yr[o] = bias.empty() ? 0.0 : bias[o];
    for (std::size_t k = 0; k < in; ++k) {
      const Real xv = xr[k];
      const Real* wk = wt.data() + k * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wk[o];
    }
  }
}

void linear_backward_input(std::span<const Real> gy, std::span<const Real> w, std::size_t rows, std::size_t in,
                           std::size_t out, std::span<Real> dx) {
  const auto n_rows = static_cast<Index>(rows);
#pragma omp parallel for schedule(static) if (rows * in * out > 32768)
  for (Index r = 0; r < n_rows; ++r) {
    Real* dxr = dx.data() + r * static_cast<Index>(in);
    const Real* gr = gy.data() + r * static_cast<Index>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const Real gv = gr[o];
      const Real* wo = w.data() + o * in;
      for (std::size_t k = 0; k < in; ++k) dxr[k] += gv * wo[k];
    }
  }
}

void linear_backward_weight(std::span<const Real> gy, std::span<const Real> x, std::size_t rows, std::size_t in,
                            std::size_t out, std::span<Real> dw) {
  const auto n_out = static_cast<Index>(out);
#pragma omp parallel for schedule(static) if (rows * in * out > 32768)
  for (Index o = 0; o < n_out; ++o) {
    Real* dwo = dw.data() + o * static_cast<Index>(in);
    for (std::size_t r = 0; r < rows; ++r) {
      const Real gv = gy[r * out + static_cast<std::size_t>(o)];
      const Real* xr = x.data() + r * in;
      for (std::size_t k = 0; k < in; ++k) dwo[k] += gv * xr[k];
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> k,
                    std::span<const Real> bias, std::span<Real> y) {
  const auto H = static_cast<Index>(g.height), W = static_cast<Index>(g.width);
  const auto OH = static_cast<Index>(g.out_height()), OW = static_cast<Index>(g.out_width());
  const auto P = static_cast<Index>(g.padding), K = static_cast<Index>(g.kernel);
  const auto n_co = static_cast<Index>(g.out_channels);
#pragma omp parallel for schedule(static) if (g.out_channels * g.height * g.width > 4096)
  for (Index co = 0; co < n_co; ++co) {
    Real* yp = y.data() + co * OH * OW;
    std::fill(yp, yp + OH * OW, bias.empty() ? 0.0 : bias[static_cast<std::size_t>(co)]);
    const std::size_t ci_lo = g.depthwise ? static_cast<std::size_t>(co) : 0;
    const std::size_t ci_hi = g.depthwise ? static_cast<std::size_t>(co) + 1 : g.in_channels;
    for (std::size_t ci = ci_lo; ci < ci_hi; ++ci) {
      const Real* xp = x.data() + ci * static_cast<std::size_t>(H * W);
      for (Index ky = 0; ky < K; ++ky) {
        Index y_lo, y_hi;
        clip_range(ky - P, H, OH, y_lo, y_hi);
        for (Index kx = 0; kx < K; ++kx) {
          Index x_lo, x_hi;
          clip_range(kx - P, W, OW, x_lo, x_hi);
          const Real wv = k[kernel_index(g, static_cast<std::size_t>(co), ci, static_cast<std::size_t>(ky),
                                         static_cast<std::size_t>(kx))];
          for (Index oy = y_lo; oy < y_hi; ++oy) {
            Real* yrow = yp + oy * OW;
            const Real* xrow = xp + (oy + ky - P) * W + (kx - P);
            for (Index ox = x_lo; ox < x_hi; ++ox) yrow[ox] += wv * xrow[ox];
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> gy, std::span<const Real> k,
                           std::span<Real> dx) {
  const auto H = static_cast<Index>(g.height), W = static_cast<Index>(g.width);
  const auto OH = static_cast<Index>(g.out_height()), OW = static_cast<Index>(g.out_width());
  const auto P = static_cast<Index>(g.padding), K = static_cast<Index>(g.kernel);
  const auto n_ci = static_cast<Index>(g.in_channels);
#pragma omp parallel for schedule(static) if (g.in_channels * g.height * g.width > 4096)
  for (Index ci = 0; ci < n_ci; ++ci) {
    Real* dxp = dx.data() + ci * H * W;
    const std::size_t co_lo = g.depthwise ? static_cast<std::size_t>(ci) : 0;
    const std::size_t co_hi = g.depthwise ? static_cast<std::size_t>(ci) + 1 : g.out_channels;
    for (std::size_t co = co_lo; co < co_hi; ++co) {
      const Real* gp = gy.data() + co * static_cast<std::size_t>(OH * OW);
      for (Index ky = 0; ky < K; ++ky) {
        // input row iy = oy + ky - P
        Index iy_lo, iy_hi;
        clip_range(P - ky, OH, H, iy_lo, iy_hi);
        for (Index kx = 0; kx < K; ++kx) {
          Index ix_lo, ix_hi;
          clip_range(P - kx, OW, W, ix_lo, ix_hi);
          const Real wv = k[kernel_index(g, co, static_cast<std::size_t>(ci), static_cast<std::size_t>(ky),
                                         static_cast<std::size_t>(kx))];
          for (Index iy = iy_lo; iy < iy_hi; ++iy) {
            Real* drow = dxp + iy * W;
            const Real* grow = gp + (iy - ky + P) * OW + (P - kx);
            for (Index ix = ix_lo; ix < ix_hi; ++ix) drow[ix] += wv * grow[ix];
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> gy, std::span<const Real> x,
                            std::span<Real> dk) {
  const auto H = static_cast<Index>(g.height), W = static_cast<Index>(g.width);
  const auto OH = static_cast<Index>(g.out_height()), OW = static_cast<Index>(g.out_width());
  const auto P = static_cast<Index>(g.padding), K = static_cast<Index>(g.kernel);
  const auto n_co = static_cast<Index>(g.out_channels);
#pragma omp parallel for schedule(static) if (g.out_channels * g.height * g.width > 4096)
  for (Index co = 0; co < n_co; ++co) {
    const Real* gp = gy.data() + co * OH * OW;
    const std::size_t ci_lo = g.depthwise ? static_cast<std::size_t>(co) : 0;
    const std::size_t ci_hi = g.depthwise ? static_cast<std::size_t>(co) + 1 : g.in_channels;
    for (std::size_t ci = ci_lo; ci < ci_hi; ++ci) {
      const Real* xp = x.data() + ci * static_cast<std::size_t>(H * W);
      for (Index ky = 0; ky < K; ++ky) {
        Index y_lo, y_hi;
        clip_range(ky - P, H, OH, y_lo, y_hi);
        for (Index kx = 0; kx < K; ++kx) {
          Index x_lo, x_hi;
          clip_range(kx - P, W, OW, x_lo, x_hi);
          const std::size_t ki = kernel_index(g, static_cast<std::size_t>(co), ci, static_cast<std::size_t>(ky),
                                              static_cast<std::size_t>(kx));
          Real acc = dk[ki];
          for (Index oy = y_lo; oy < y_hi; ++oy) {
            const Real* grow = gp + oy * OW;
            const Real* xrow = xp + (oy + ky - P) * W + (kx - P);
            for (Index ox = x_lo; ox < x_hi; ++ox) acc += grow[ox] * xrow[ox];
          }
          dk[ki] = acc;
        }
      }
    }
  }
}

void scan_forward(const ScanGeometry& g, const ScanOperands& in, std::span<Real> y, std::span<Real> states) {
  const auto n_ch = static_cast<Index>(g.channels);
#pragma omp parallel if (g.channels * g.steps * g.states > 8192)
  {
    std::vector<Real> h(g.states);
#pragma omp for schedule(static)
    for (Index c = 0; c < n_ch; ++c) {
      scan_forward_channel(g, in, static_cast<std::size_t>(c), y, states.empty() ? nullptr : states.data(),
                           h.data());
    }
  }
}

void scan_backward(const ScanGeometry& g, const ScanOperands& in, std::span<const Real> states,
                   std::span<const Real> gy, const ScanGradients& grads) {
  const std::size_t TN = g.steps * g.states;
  std::vector<Real> db(g.channels * TN), dc(g.channels * TN);
  const auto n_ch = static_cast<Index>(g.channels);
#pragma omp parallel if (g.channels * g.steps * g.states > 8192)
  {
    std::vector<Real> carry(g.states);
#pragma omp for schedule(static)
    for (Index c = 0; c < n_ch; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      scan_backward_channel(g, in, states, gy, grads, cu, db.data() + cu * TN, dc.data() + cu * TN, carry.data());
    }
  }
  reduce_channel_partials(g, db, dc, grads);
}

}  // namespace parallel

}  // namespace lfsamba::kernels
