#include "lfsamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lfsamba/errors.hpp"
#include "lfsamba/kernels.hpp"

namespace lfsamba {

namespace {

using Index = std::ptrdiff_t;

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(x.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void accumulate(std::vector<Real>* dst, std::span<const Real> src) {
  if (dst == nullptr) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear");
  const std::size_t out = weight.dim(0), in = weight.dim(1);
  if (x.rank() == 0 || x.shape().back() != in) {
    throw DimensionError("linear: input last axis " + std::to_string(x.rank() ? x.shape().back() : 0) +
                         " does not match weight axis 1 (" + std::to_string(in) + ")");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out)) {
    throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " does not match weight axis 0 (" +
                         std::to_string(out) + ")");
  }
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = out;
  std::vector<Real> y(rows * out);
  kernels::parallel::linear_forward(x.data(), weight.data(),
                                    bias.defined() ? bias.data() : std::span<const Real>{}, rows, in, out, y);
  return record_op(std::move(shape), std::move(y), {x, weight, bias},
                   [x, weight, rows, in, out](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     if (g[0]) kernels::parallel::linear_backward_input(gy, weight.data(), rows, in, out, *g[0]);
                     if (g[1]) kernels::parallel::linear_backward_weight(gy, x.data(), rows, in, out, *g[1]);
                     if (g[2]) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t o = 0; o < out; ++o) (*g[2])[o] += gy[r * out + o];
                       }
                     }
                   });
}

Tensor channel_linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 3, "channel_linear");
  require_rank(weight, 2, "channel_linear");
  const std::size_t C = x.dim(0), P = x.dim(1) * x.dim(2), O = weight.dim(0);
  if (weight.dim(1) != C) {
    throw DimensionError("channel_linear: weight axis 1 (" + std::to_string(weight.dim(1)) +
                         ") does not match input channels (" + std::to_string(C) + ")");
  }
  if (bias.defined() && bias.numel() != O) throw DimensionError("channel_linear: bias length mismatch");
  std::vector<Real> y(O * P);
  const auto xd = x.data();
  const auto wd = weight.data();
#pragma omp parallel for schedule(static) if (O * C * P > 32768)
  for (Index o = 0; o < static_cast<Index>(O); ++o) {
    Real* yo = y.data() + static_cast<std::size_t>(o) * P;
    std::fill(yo, yo + P, bias.defined() ? bias[static_cast<std::size_t>(o)] : 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      const Real wv = wd[static_cast<std::size_t>(o) * C + c];
      const Real* xc = xd.data() + c * P;
      for (std::size_t p = 0; p < P; ++p) yo[p] += wv * xc[p];
    }
  }
  return record_op(
      {O, x.dim(1), x.dim(2)}, std::move(y), {x, weight, bias},
      [x, weight, C, P, O](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
        const auto xd = x.data();
        const auto wd = weight.data();
        if (g[0]) {
          auto& dx = *g[0];
#pragma omp parallel for schedule(static) if (O * C * P > 32768)
          for (Index c = 0; c < static_cast<Index>(C); ++c) {
            Real* dxc = dx.data() + static_cast<std::size_t>(c) * P;
            for (std::size_t o = 0; o < O; ++o) {
              const Real wv = wd[o * C + static_cast<std::size_t>(c)];
              const Real* go = gy.data() + o * P;
              for (std::size_t p = 0; p < P; ++p) dxc[p] += wv * go[p];
            }
          }
        }
        if (g[1]) {
          auto& dw = *g[1];
#pragma omp parallel for schedule(static) if (O * C * P > 32768)
          for (Index o = 0; o < static_cast<Index>(O); ++o) {
            const Real* go = gy.data() + static_cast<std::size_t>(o) * P;
            for (std::size_t c = 0; c < C; ++c) {
              const Real* xc = xd.data() + c * P;
              Real acc = dw[static_cast<std::size_t>(o) * C + c];
              for (std::size_t p = 0; p < P; ++p) acc += go[p] * xc[p];
              dw[static_cast<std::size_t>(o) * C + c] = acc;
            }
          }
        }
        if (g[2]) {
          for (std::size_t o = 0; o < O; ++o) {
            Real acc = 0.0;
            for (std::size_t p = 0; p < P; ++p) acc += gy[o * P + p];
            (*g[2])[o] += acc;
          }
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t padding, bool depthwise) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d kernel");
  kernels::ConvGeometry geo;
  geo.in_channels = x.dim(0);
  geo.height = x.dim(1);
  geo.width = x.dim(2);
  geo.out_channels = kernel.dim(0);
  geo.kernel = kernel.dim(2);
  geo.padding = padding;
  geo.depthwise = depthwise;
  if (kernel.dim(3) != geo.kernel) throw DimensionError("conv2d: kernel must be square, got " + shape_str(kernel.shape()));
  if (depthwise) {
    if (kernel.dim(1) != 1 || geo.out_channels != geo.in_channels) {
      throw DimensionError("conv2d: depthwise kernel must be [C,1,k,k] with C=" + std::to_string(geo.in_channels) +
                           ", got " + shape_str(kernel.shape()));
    }
  } else if (kernel.dim(1) != geo.in_channels) {
    throw DimensionError("conv2d: kernel axis 1 (" + std::to_string(kernel.dim(1)) +
                         ") does not match input channels (" + std::to_string(geo.in_channels) + ")");
  }
  if (geo.kernel > geo.height + 2 * padding || geo.kernel > geo.width + 2 * padding) {
    throw DimensionError("conv2d: kernel " + std::to_string(geo.kernel) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != geo.out_channels) throw DimensionError("conv2d: bias length mismatch");
  const std::size_t OH = geo.out_height(), OW = geo.out_width();
  std::vector<Real> y(geo.out_channels * OH * OW);
  kernels::parallel::conv2d_forward(geo, x.data(), kernel.data(),
                                    bias.defined() ? bias.data() : std::span<const Real>{}, y);
  return record_op({geo.out_channels, OH, OW}, std::move(y), {x, kernel, bias},
                   [x, kernel, geo, OH, OW](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     if (g[0]) kernels::parallel::conv2d_backward_input(geo, gy, kernel.data(), *g[0]);
                     if (g[1]) kernels::parallel::conv2d_backward_weight(geo, gy, x.data(), *g[1]);
                     if (g[2]) {
                       for (std::size_t co = 0; co < geo.out_channels; ++co) {
                         Real acc = 0.0;
                         for (std::size_t i = 0; i < OH * OW; ++i) acc += gy[co * OH * OW + i];
                         (*g[2])[co] += acc;
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------

Real sigmoid_scalar(Real t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const Real e = std::exp(t);
  return e / (1.0 + e);
}

Real softplus_scalar(Real t) {
  if (t > 30.0) return t;
  if (t < -30.0) return std::exp(t);
  return std::log1p(std::exp(t));
}

namespace {

constexpr Real kGeluC = 0.7978845608028654;  // sqrt(2/pi)

Real act_forward(Activation kind, Real t) {
  switch (kind) {
    case Activation::silu: return t * sigmoid_scalar(t);
    case Activation::relu: return t > 0 ? t : 0.0;
    case Activation::sigmoid: return sigmoid_scalar(t);
    case Activation::softplus: return softplus_scalar(t);
    case Activation::gelu: return 0.5 * t * (1.0 + std::tanh(kGeluC * (t + 0.044715 * t * t * t)));
    case Activation::exp: return std::exp(t);
  }
  return 0.0;
}

Real act_derivative(Activation kind, Real t, Real y) {
  switch (kind) {
    case Activation::silu: {
      const Real s = sigmoid_scalar(t);
      return s * (1.0 + t * (1.0 - s));
    }
    case Activation::relu: return t > 0 ? 1.0 : 0.0;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::softplus: return sigmoid_scalar(t);
    case Activation::gelu: {
      const Real u = kGeluC * (t + 0.044715 * t * t * t);
      const Real th = std::tanh(u);
      return 0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * t * t);
    }
    case Activation::exp: return y;
  }
  return 0.0;
}

}  // namespace

Tensor activation(const Tensor& x, Activation kind) {
  const auto xd = x.data();
  std::vector<Real> y(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) y[i] = act_forward(kind, xd[i]);
  std::vector<Real> saved;
  if (will_record({x})) saved = y;
  return record_op(x.shape(), std::move(y), {x},
                   [x, kind, saved = std::move(saved)](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     if (!g[0]) return;
                     const auto xd = x.data();
                     auto& dx = *g[0];
                     for (std::size_t i = 0; i < xd.size(); ++i) {
                       dx[i] += gy[i] * act_derivative(kind, xd[i], saved[i]);
                     }
                   });
}

// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma/beta length must equal last axis " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  std::vector<Real> y(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xd.data() + r * d;
    Real mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<Real>(d);
    Real var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<Real>(d);
    const Real inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const Real xh = (xr[i] - mu) * inv;
      xhat[r * d + i] = xh;
      y[r * d + i] = gd[i] * xh + bd[i];
    }
  }
  return record_op(x.shape(), std::move(y), {x, gamma, beta},
                   [gamma, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                       std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     const auto gd = gamma.data();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const Real* gr = gy.data() + r * d;
                       const Real* xh = xhat.data() + r * d;
                       if (g[0]) {
                         Real m1 = 0.0, m2 = 0.0;
                         for (std::size_t i = 0; i < d; ++i) {
                           const Real dxh = gr[i] * gd[i];
                           m1 += dxh;
                           m2 += dxh * xh[i];
                         }
                         m1 /= static_cast<Real>(d);
                         m2 /= static_cast<Real>(d);
                         for (std::size_t i = 0; i < d; ++i) {
                           (*g[0])[r * d + i] += inv_std[r] * (gr[i] * gd[i] - m1 - xh[i] * m2);
                         }
                       }
                       if (g[1]) {
                         for (std::size_t i = 0; i < d; ++i) (*g[1])[i] += gr[i] * xh[i];
                       }
                       if (g[2]) {
                         for (std::size_t i = 0; i < d; ++i) (*g[2])[i] += gr[i];
                       }
                     }
                   });
}

Tensor channel_layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  require_rank(x, 3, "channel_layer_norm");
  return to_grid(layer_norm(to_tokens(x), gamma, beta, eps), x.dim(1), x.dim(2));
}

// ---------------------------------------------------------------------------

Tensor pool2d(const Tensor& x, PoolKind kind, std::size_t window, std::size_t stride) {
  require_rank(x, 3, "pool2d");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (window == 0 || stride == 0 || window > H || window > W || (H - window) % stride != 0 ||
      (W - window) % stride != 0) {
    throw DimensionError("pool2d: window " + std::to_string(window) + " / stride " + std::to_string(stride) +
                         " does not tile input " + shape_str(x.shape()));
  }
  const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
  const auto xd = x.data();
  std::vector<Real> y(C * OH * OW);
  std::vector<std::size_t> argmax(kind == PoolKind::max ? y.size() : 0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const std::size_t o = (c * OH + oy) * OW + ox;
        Real acc = kind == PoolKind::max ? -HUGE_VAL : 0.0;
        std::size_t best = 0;
        for (std::size_t wy = 0; wy < window; ++wy) {
          for (std::size_t wx = 0; wx < window; ++wx) {
            const std::size_t i = (c * H + oy * stride + wy) * W + ox * stride + wx;
            if (kind == PoolKind::max) {
              if (xd[i] > acc) {
                acc = xd[i];
                best = i;
              }
            } else {
              acc += xd[i];
            }
          }
        }
        if (kind == PoolKind::max) {
          y[o] = acc;
          argmax[o] = best;
        } else {
          y[o] = acc / static_cast<Real>(window * window);
        }
      }
    }
  }
  return record_op({C, OH, OW}, std::move(y), {x},
                   [kind, window, stride, C, H, W, OH, OW, argmax = std::move(argmax)](
                       std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     if (!g[0]) return;
                     auto& dx = *g[0];
                     if (kind == PoolKind::max) {
                       for (std::size_t o = 0; o < gy.size(); ++o) dx[argmax[o]] += gy[o];
                       return;
                     }
                     const Real inv = 1.0 / static_cast<Real>(window * window);
                     for (std::size_t c = 0; c < C; ++c) {
                       for (std::size_t oy = 0; oy < OH; ++oy) {
                         for (std::size_t ox = 0; ox < OW; ++ox) {
                           const Real gv = gy[(c * OH + oy) * OW + ox] * inv;
                           for (std::size_t wy = 0; wy < window; ++wy) {
                             for (std::size_t wx = 0; wx < window; ++wx) {
                               dx[(c * H + oy * stride + wy) * W + ox * stride + wx] += gv;
                             }
                           }
                         }
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------

Tensor combine(const std::vector<Tensor>& inputs, CombineMode mode) {
  if (inputs.empty()) throw ContractError("combine: no inputs");
  const Shape& first = inputs.front().shape();
  switch (mode) {
    case CombineMode::concat_channel: {
      Shape shape = first;
      std::size_t axis0 = 0;
      for (const auto& t : inputs) {
        if (t.rank() != first.size() || !std::equal(first.begin() + 1, first.end(), t.shape().begin() + 1)) {
          throw DimensionError("combine(concat_channel): incompatible shapes " + shape_str(first) + " and " +
                               shape_str(t.shape()));
        }
        axis0 += t.dim(0);
      }
      shape[0] = axis0;
      std::vector<Real> y;
      y.reserve(shape_numel(shape));
      std::vector<std::size_t> offsets;
      for (const auto& t : inputs) {
        offsets.push_back(y.size());
        y.insert(y.end(), t.data().begin(), t.data().end());
      }
      return record_op_list(std::move(shape), std::move(y), inputs,
                            [offsets](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                              for (std::size_t k = 0; k < g.size(); ++k) {
                                if (g[k]) accumulate(g[k], gy.subspan(offsets[k], g[k]->size()));
                              }
                            });
    }
    case CombineMode::stack_new_axis: {
      for (const auto& t : inputs) {
        if (t.shape() != first) {
          throw DimensionError("combine(stack_new_axis): shape mismatch " + shape_str(first) + " vs " +
                               shape_str(t.shape()));
        }
      }
      Shape shape{inputs.size()};
      shape.insert(shape.end(), first.begin(), first.end());
      const std::size_t n = shape_numel(first);
      std::vector<Real> y;
      y.reserve(n * inputs.size());
      for (const auto& t : inputs) y.insert(y.end(), t.data().begin(), t.data().end());
      return record_op_list(std::move(shape), std::move(y), inputs,
                            [n](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                              for (std::size_t k = 0; k < g.size(); ++k) accumulate(g[k], gy.subspan(k * n, n));
                            });
    }
    case CombineMode::add: {
      for (const auto& t : inputs) require_same_shape(inputs.front(), t, "combine(add)");
      std::vector<Real> y(inputs.front().data().begin(), inputs.front().data().end());
      for (std::size_t k = 1; k < inputs.size(); ++k) {
        const auto d = inputs[k].data();
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += d[i];
      }
      return record_op_list(first, std::move(y), inputs,
                            [](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                              for (auto* gk : g) accumulate(gk, gy);
                            });
    }
    case CombineMode::mul: {
      for (const auto& t : inputs) require_same_shape(inputs.front(), t, "combine(mul)");
      std::vector<Real> y(inputs.front().data().begin(), inputs.front().data().end());
      for (std::size_t k = 1; k < inputs.size(); ++k) {
        const auto d = inputs[k].data();
        for (std::size_t i = 0; i < y.size(); ++i) y[i] *= d[i];
      }
      return record_op_list(first, std::move(y), inputs,
                            [inputs](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                              for (std::size_t k = 0; k < g.size(); ++k) {
                                if (!g[k]) continue;
                                for (std::size_t i = 0; i < gy.size(); ++i) {
                                  Real prod = gy[i];
                                  for (std::size_t j = 0; j < inputs.size(); ++j) {
                                    if (j != k) prod *= inputs[j][i];
                                  }
                                  (*g[k])[i] += prod;
                                }
                              }
                            });
    }
  }
  throw ContractError("combine: unknown mode");
}

Tensor unstack(const Tensor& x, std::size_t index) {
  if (x.rank() < 2) throw DimensionError("unstack: need rank >= 2, got " + shape_str(x.shape()));
  if (index >= x.dim(0)) throw DimensionError("unstack: index out of range for " + shape_str(x.shape()));
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t n = shape_numel(shape);
  const auto xd = x.data().subspan(index * n, n);
  return record_op(std::move(shape), std::vector<Real>(xd.begin(), xd.end()), {x},
                   [index, n](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     if (!g[0]) return;
                     for (std::size_t i = 0; i < n; ++i) (*g[0])[index * n + i] += gy[i];
                   });
}

Tensor mean_axis0(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("mean_axis0: need rank >= 2, got " + shape_str(x.shape()));
  const std::size_t k = x.dim(0);
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t n = shape_numel(shape);
  const auto xd = x.data();
  std::vector<Real> y(n, 0.0);
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t i = 0; i < n; ++i) y[i] += xd[s * n + i];
  }
  const Real inv = 1.0 / static_cast<Real>(k);
  for (auto& v : y) v *= inv;
  return record_op(std::move(shape), std::move(y), {x},
                   [k, n, inv](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     if (!g[0]) return;
                     for (std::size_t s = 0; s < k; ++s) {
                       for (std::size_t i = 0; i < n; ++i) (*g[0])[s * n + i] += gy[i] * inv;
                     }
                   });
}

Tensor gather(const Tensor& x, std::span<const std::size_t> index, Shape out_shape) {
  if (shape_numel(out_shape) != index.size()) {
    throw DimensionError("gather: index length " + std::to_string(index.size()) + " does not fill shape " +
                         shape_str(out_shape));
  }
  const auto xd = x.data();
  std::vector<Real> y(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xd.size()) throw DimensionError("gather: index out of range");
    y[i] = xd[index[i]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return record_op(std::move(out_shape), std::move(y), {x},
                   [idx = std::move(idx)](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     if (!g[0]) return;
                     for (std::size_t i = 0; i < idx.size(); ++i) (*g[0])[idx[i]] += gy[i];
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return record_op(std::move(shape), std::vector<Real>(x.data().begin(), x.data().end()), {x},
                   [](std::span<const Real> gy, std::span<std::vector<Real>*> g) { accumulate(g[0], gy); });
}

Tensor scale(const Tensor& x, Real factor) {
  std::vector<Real> y(x.data().begin(), x.data().end());
  for (auto& v : y) v *= factor;
  return record_op(x.shape(), std::move(y), {x},
                   [factor](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     if (!g[0]) return;
                     for (std::size_t i = 0; i < gy.size(); ++i) (*g[0])[i] += gy[i] * factor;
                   });
}

Tensor sum(const Tensor& x) {
  Real acc = 0.0;
  for (Real v : x.data()) acc += v;
  return record_op({1}, {acc}, {x}, [](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
    if (!g[0]) return;
    for (auto& v : *g[0]) v += gy[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<Real>(x.numel())); }

Tensor to_tokens(const Tensor& grid) {
  require_rank(grid, 3, "to_tokens");
  const std::size_t C = grid.dim(0), P = grid.dim(1) * grid.dim(2);
  std::vector<std::size_t> idx(C * P);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t c = 0; c < C; ++c) idx[p * C + c] = c * P + p;
  }
  return gather(grid, idx, {P, C});
}

Tensor to_grid(const Tensor& tokens, std::size_t height, std::size_t width) {
  require_rank(tokens, 2, "to_grid");
  const std::size_t P = tokens.dim(0), C = tokens.dim(1);
  if (P != height * width) {
    throw DimensionError("to_grid: " + std::to_string(P) + " tokens do not fill " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  std::vector<std::size_t> idx(C * P);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < P; ++p) idx[c * P + p] = p * C + c;
  }
  return gather(tokens, idx, {C, height, width});
}

// ---------------------------------------------------------------------------

namespace {

struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<Real> w_hi;
};

AxisTaps upsample_taps(std::size_t n_in) {
  AxisTaps taps;
  const std::size_t n_out = 2 * n_in;
  for (std::size_t o = 0; o < n_out; ++o) {
    Real src = (static_cast<Real>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > n_in - 1) i0 = n_in - 1;
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    taps.lo.push_back(i0);
    taps.hi.push_back(i1);
    taps.w_hi.push_back(src - static_cast<Real>(i0));
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear2x(const Tensor& x) {
  require_rank(x, 3, "upsample_bilinear2x");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), OH = 2 * H, OW = 2 * W;
  const AxisTaps ty = upsample_taps(H), tx = upsample_taps(W);
  const auto xd = x.data();
  std::vector<Real> y(C * OH * OW);
  for (std::size_t c = 0; c < C; ++c) {
    const Real* xp = xd.data() + c * H * W;
    for (std::size_t oy = 0; oy < OH; ++oy) {
      const Real wy = ty.w_hi[oy];
      const Real* r0 = xp + ty.lo[oy] * W;
      const Real* r1 = xp + ty.hi[oy] * W;
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const Real wx = tx.w_hi[ox];
        const Real top = (1.0 - wx) * r0[tx.lo[ox]] + wx * r0[tx.hi[ox]];
        const Real bot = (1.0 - wx) * r1[tx.lo[ox]] + wx * r1[tx.hi[ox]];
        y[(c * OH + oy) * OW + ox] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return record_op({C, OH, OW}, std::move(y), {x},
                   [C, H, W, OH, OW, ty, tx](std::span<const Real> gy, std::span<std::vector<Real>*> g) {
                     if (!g[0]) return;
                     auto& dx = *g[0];
                     for (std::size_t c = 0; c < C; ++c) {
                       Real* dp = dx.data() + c * H * W;
                       for (std::size_t oy = 0; oy < OH; ++oy) {
                         const Real wy = ty.w_hi[oy];
                         for (std::size_t ox = 0; ox < OW; ++ox) {
                           const Real wx = tx.w_hi[ox];
                           const Real gv = gy[(c * OH + oy) * OW + ox];
                           dp[ty.lo[oy] * W + tx.lo[ox]] += gv * (1.0 - wy) * (1.0 - wx);
                           dp[ty.lo[oy] * W + tx.hi[ox]] += gv * (1.0 - wy) * wx;
                           dp[ty.hi[oy] * W + tx.lo[ox]] += gv * wy * (1.0 - wx);
                           dp[ty.hi[oy] * W + tx.hi[ox]] += gv * wy * wx;
                         }
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------

Tensor attention(const Tensor& qkv, std::size_t heads) {
  require_rank(qkv, 2, "attention");
  const std::size_t T = qkv.dim(0);
  if (qkv.dim(1) % 3 != 0) throw DimensionError("attention: packed width must be 3d, got " + shape_str(qkv.shape()));
  const std::size_t d = qkv.dim(1) / 3;
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  const std::size_t dh = d / heads, stride = 3 * d;
  const Real inv_sqrt = 1.0 / std::sqrt(static_cast<Real>(dh));
  const auto in = qkv.data();
  std::vector<Real> probs(heads * T * T);
  std::vector<Real> y(T * d, 0.0);
#pragma omp parallel for schedule(static) if (heads * T * T * dh > 32768)
  for (Index hh = 0; hh < static_cast<Index>(heads); ++hh) {
    const auto h = static_cast<std::size_t>(hh);
    const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
    for (std::size_t i = 0; i < T; ++i) {
      Real* p = probs.data() + (h * T + i) * T;
      Real mx = -HUGE_VAL;
      for (std::size_t j = 0; j < T; ++j) {
        Real s = 0.0;
        for (std::size_t e = 0; e < dh; ++e) s += in[i * stride + qo + e] * in[j * stride + ko + e];
        p[j] = s * inv_sqrt;
        mx = std::max(mx, p[j]);
      }
      Real z = 0.0;
      for (std::size_t j = 0; j < T; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < T; ++j) p[j] /= z;
      Real* yi = y.data() + i * d + h * dh;
      for (std::size_t j = 0; j < T; ++j) {
        const Real pj = p[j];
        const Real* vj = in.data() + j * stride + vo;
        for (std::size_t e = 0; e < dh; ++e) yi[e] += pj * vj[e];
      }
    }
  }
  return record_op(
      {T, d}, std::move(y), {qkv},
      [qkv, probs = std::move(probs), T, d, dh, heads, stride, inv_sqrt](std::span<const Real> gy,
                                                                         std::span<std::vector<Real>*> g) {
        if (!g[0]) return;
        const auto in = qkv.data();
        auto& dqkv = *g[0];
#pragma omp parallel for schedule(static) if (heads * T * T * dh > 32768)
        for (Index hh = 0; hh < static_cast<Index>(heads); ++hh) {
          const auto h = static_cast<std::size_t>(hh);
          const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
          std::vector<Real> dp(T);
          for (std::size_t i = 0; i < T; ++i) {
            const Real* p = probs.data() + (h * T + i) * T;
            const Real* gi = gy.data() + i * d + h * dh;
            Real dot = 0.0;
            for (std::size_t j = 0; j < T; ++j) {
              Real s = 0.0;
              const Real* vj = in.data() + j * stride + vo;
              for (std::size_t e = 0; e < dh; ++e) s += gi[e] * vj[e];
              dp[j] = s;
              dot += s * p[j];
              Real* dvj = dqkv.data() + j * stride + vo;
              for (std::size_t e = 0; e < dh; ++e) dvj[e] += p[j] * gi[e];
            }
            for (std::size_t j = 0; j < T; ++j) {
              const Real ds = p[j] * (dp[j] - dot) * inv_sqrt;
              const Real* qi = in.data() + i * stride + qo;
              const Real* kj = in.data() + j * stride + ko;
              Real* dqi = dqkv.data() + i * stride + qo;
              Real* dkj = dqkv.data() + j * stride + ko;
              for (std::size_t e = 0; e < dh; ++e) {
                dqi[e] += ds * kj[e];
                dkj[e] += ds * qi[e];
              }
            }
          }
        }
      });
}

}  // namespace lfsamba
