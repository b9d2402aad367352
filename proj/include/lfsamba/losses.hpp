#pragma once

// Training objectives over a saliency map pred [H,W] in (0,1).

#include "lfsamba/focal_stack.hpp"
#include "lfsamba/tensor.hpp"

namespace lfsamba {

struct LossConstants {
  std::size_t pool_window = 31;  // edge-aware weight window (odd)
  Real edge_gain = 5.0;
  Real clamp = 1e-7;
  Real lsc_radius = 5.0;
  Real lsc_sigma_xy = 3.0;
  Real lsc_sigma_rgb = 0.1;
  Real smooth_alpha = 10.0;
  Real lambda_lsc = 0.3;
  Real lambda_smooth = 0.3;
};

enum class Supervision { full, weak };

/// Edge weights w = 1 + gain·|mean_window(gt) − gt|; windows are clipped at the border.
Tensor edge_weights(const Tensor& gt, const LossConstants& k = {});

/// Σw·bce/Σw + 1 − (Σw·p·g + 1)/(Σw·(p + g − p·g) + 1).
Tensor weighted_bce_iou(const Tensor& pred, const Tensor& gt, const LossConstants& k = {});

/// Mean binary cross entropy over scribbled pixels; zero when nothing is labeled.
Tensor partial_ce(const Tensor& pred, const Tensor& scribble, const LossConstants& k = {});

/// Σ_{pairs within radius} K(i,j)·|p_i − p_j| / (number of pairs), pairs unordered.
Tensor lsc_loss(const Tensor& pred, const Tensor& image, const LossConstants& k = {});

/// Mean over pixels of edge-attenuated forward differences of pred.
Tensor smoothness_loss(const Tensor& pred, const Tensor& image, const LossConstants& k = {});

Tensor total_loss(const Tensor& pred, const FocalStack& sample, Supervision mode, const LossConstants& k = {});

}  // namespace lfsamba
