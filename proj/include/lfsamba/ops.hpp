#pragma once

// Differentiable tensor operations. Each records a tape node when a tape is
// active and any input requires a gradient (see tensor.hpp).
//
// Shape conventions: feature maps are [C, H, W]; token sequences are [T, d].
// There is no implicit broadcasting beyond a bias over the last axis.

#include <cstddef>
#include <span>
#include <vector>

#include "lfsamba/tensor.hpp"

namespace lfsamba {

enum class Activation { silu, relu, sigmoid, softplus, gelu, exp };
enum class PoolKind { max, avg };
enum class CombineMode { concat_channel, stack_new_axis, add, mul };

/// y = x·Wᵀ + b over the last axis of x. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Per-pixel linear map over channels of a [C,H,W] map (a 1×1 convolution).
Tensor channel_linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Stride-1 cross-correlation of x [C_in,H,W] with kernel [C_out,C_in,k,k],
/// or [C,1,k,k] when depthwise. `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t padding, bool depthwise = false);

Tensor activation(const Tensor& x, Activation kind);
inline Tensor silu(const Tensor& x) { return activation(x, Activation::silu); }
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }
inline Tensor softplus(const Tensor& x) { return activation(x, Activation::softplus); }

/// Scalar versions with the same overflow guards.
Real sigmoid_scalar(Real t);
Real softplus_scalar(Real t);

/// Normalizes over the last axis, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);

/// Layer norm over the channel axis of a [C,H,W] map.
Tensor channel_layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);

/// Windowed max/mean over a [C,H,W] map; H and W must tile exactly.
Tensor pool2d(const Tensor& x, PoolKind kind, std::size_t window, std::size_t stride);

Tensor combine(const std::vector<Tensor>& inputs, CombineMode mode);
inline Tensor add(const Tensor& a, const Tensor& b) { return combine({a, b}, CombineMode::add); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return combine({a, b}, CombineMode::mul); }

/// Slice `index` along axis 0; inverse of stack_new_axis.
Tensor unstack(const Tensor& x, std::size_t index);

/// Mean across axis 0.
Tensor mean_axis0(const Tensor& x);

/// out.flat[i] = x.flat[index[i]]; gradients scatter-add back.
Tensor gather(const Tensor& x, std::span<const std::size_t> index, Shape out_shape);

Tensor reshape(const Tensor& x, Shape shape);
Tensor scale(const Tensor& x, Real factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// [C,H,W] ↔ [H·W, C] layout changes.
Tensor to_tokens(const Tensor& grid);
Tensor to_grid(const Tensor& tokens, std::size_t height, std::size_t width);

/// Bilinear ×2 upsampling of a [C,H,W] map (half-pixel centers, edge clamp).
Tensor upsample_bilinear2x(const Tensor& x);

/// Multi-head scaled dot-product self-attention over packed qkv [T, 3d].
Tensor attention(const Tensor& qkv, std::size_t heads);

}  // namespace lfsamba
