#include "lfsamba/losses.hpp"

#include <cmath>

#include "lfsamba/errors.hpp"
#include "lfsamba/ops.hpp"

namespace lfsamba {

namespace {

void require_map(const Tensor& pred, const Tensor& other, const char* op, const char* what) {
  if (pred.rank() != 2) throw DimensionError(std::string(op) + ": pred must be [H,W], got " + shape_str(pred.shape()));
  const bool ok = other.rank() == pred.rank() ? other.shape() == pred.shape()
                                               : other.rank() == 3 && other.dim(1) == pred.dim(0) &&
                                                     other.dim(2) == pred.dim(1);
  if (!ok) {
    throw DimensionError(std::string(op) + ": " + what + " " + shape_str(other.shape()) + " does not match pred " +
                         shape_str(pred.shape()));
  }
}

struct Clamped {
  Real value;
  bool inside;
};

Clamped clamp_prob(Real p, Real eps) {
  if (p < eps) return {eps, false};
  if (p > 1.0 - eps) return {1.0 - eps, false};
  return {p, true};
}

Real bce(Real p, Real g) { return -(g * std::log(p) + (1.0 - g) * std::log(1.0 - p)); }
Real bce_grad(Real p, Real g) { return -g / p + (1.0 - g) / (1.0 - p); }

Real sign(Real v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Tensor edge_weights(const Tensor& gt, const LossConstants& k) {
  if (gt.rank() != 2) throw DimensionError("edge_weights: gt must be [H,W]");
  if (k.pool_window % 2 == 0) throw ConfigError("edge_weights: pool window must be odd");
  const std::size_t H = gt.dim(0), W = gt.dim(1);
  const long r = static_cast<long>(k.pool_window / 2);
  // summed-area table with a zero border row/column
  std::vector<Real> sat((H + 1) * (W + 1), 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      sat[(y + 1) * (W + 1) + x + 1] =
          gt[y * W + x] + sat[y * (W + 1) + x + 1] + sat[(y + 1) * (W + 1) + x] - sat[y * (W + 1) + x];
  std::vector<Real> w(H * W);
  for (long y = 0; y < static_cast<long>(H); ++y) {
    const long y0 = std::max(0L, y - r), y1 = std::min(static_cast<long>(H), y + r + 1);
    for (long x = 0; x < static_cast<long>(W); ++x) {
      const long x0 = std::max(0L, x - r), x1 = std::min(static_cast<long>(W), x + r + 1);
      const Real s = sat[y1 * (W + 1) + x1] - sat[y0 * (W + 1) + x1] - sat[y1 * (W + 1) + x0] + sat[y0 * (W + 1) + x0];
      const Real mean = s / static_cast<Real>((y1 - y0) * (x1 - x0));
      w[y * W + x] = 1.0 + k.edge_gain * std::abs(mean - gt[y * W + x]);
    }
  }
  return Tensor::from({H, W}, std::move(w));
}

Tensor weighted_bce_iou(const Tensor& pred, const Tensor& gt, const LossConstants& k) {
  require_map(pred, gt, "weighted_bce_iou", "gt");
  const Tensor weights = edge_weights(gt, k);
  const std::size_t n = pred.numel();
  Real sw = 0.0, sb = 0.0, inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real w = weights[i], p = pred[i], g = gt[i];
    sw += w;
    sb += w * bce(clamp_prob(p, k.clamp).value, g);
    inter += w * p * g;
    uni += w * (p + g - p * g);
  }
  const Real loss = sb / sw + 1.0 - (inter + 1.0) / (uni + 1.0);
  return record_op({1}, {loss}, {pred, gt},
                   [pred, gt, weights, sw, inter, uni, eps = k.clamp](std::span<const Real> gy,
                                                                      std::span<std::vector<Real>*> grads) {
                     if (!grads[0]) return;
                     auto& gp = *grads[0];
                     const Real den = (uni + 1.0) * (uni + 1.0);
                     for (std::size_t i = 0; i < gp.size(); ++i) {
                       const Real w = weights[i], g = gt[i];
                       const Clamped c = clamp_prob(pred[i], eps);
                       const Real d_bce = c.inside ? w * bce_grad(c.value, g) / sw : 0.0;
                       const Real d_iou = -(w * g * (uni + 1.0) - (inter + 1.0) * w * (1.0 - g)) / den;
                       gp[i] += gy[0] * (d_bce + d_iou);
                     }
                   });
}

Tensor partial_ce(const Tensor& pred, const Tensor& scribble, const LossConstants& k) {
  require_map(pred, scribble, "partial_ce", "scribble");
  Real total = 0.0;
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const int s = static_cast<int>(scribble[i]);
    if (s == kUnlabeled) continue;
    total += bce(clamp_prob(pred[i], k.clamp).value, s == kForeground ? 1.0 : 0.0);
    ++labeled;
  }
  const Real loss = labeled ? total / static_cast<Real>(labeled) : 0.0;
  return record_op({1}, {loss}, {pred},
                   [pred, scribble, labeled, eps = k.clamp](std::span<const Real> gy,
                                                            std::span<std::vector<Real>*> grads) {
                     if (!grads[0] || labeled == 0) return;
                     auto& gp = *grads[0];
                     for (std::size_t i = 0; i < gp.size(); ++i) {
                       const int s = static_cast<int>(scribble[i]);
                       if (s == kUnlabeled) continue;
                       const Clamped c = clamp_prob(pred[i], eps);
                       if (!c.inside) continue;
                       gp[i] += gy[0] * bce_grad(c.value, s == kForeground ? 1.0 : 0.0) / static_cast<Real>(labeled);
                     }
                   });
}

namespace {

struct PairTable {
  std::vector<std::size_t> a, b;
  std::vector<Real> kernel;
};

PairTable lsc_pairs(const Tensor& image, std::size_t H, std::size_t W, const LossConstants& k) {
  PairTable t;
  const long r = static_cast<long>(std::floor(k.lsc_radius));
  const Real r2 = k.lsc_radius * k.lsc_radius;
  const Real sxy = 2.0 * k.lsc_sigma_xy * k.lsc_sigma_xy, srgb = 2.0 * k.lsc_sigma_rgb * k.lsc_sigma_rgb;
  const std::size_t plane = H * W;
  for (long y = 0; y < static_cast<long>(H); ++y) {
    for (long x = 0; x < static_cast<long>(W); ++x) {
      // each unordered pair once: partner strictly after (y, x) in raster order
      for (long dy = 0; dy <= r; ++dy) {
        for (long dx = -r; dx <= r; ++dx) {
          if (dy == 0 && dx <= 0) continue;
          const Real d2 = static_cast<Real>(dy * dy + dx * dx);
          if (d2 > r2) continue;
          const long yy = y + dy, xx = x + dx;
          if (yy >= static_cast<long>(H) || xx < 0 || xx >= static_cast<long>(W)) continue;
          const std::size_t i = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
          const std::size_t j = static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx);
          Real c2 = 0.0;
          for (std::size_t c = 0; c < 3; ++c) {
            const Real diff = image[c * plane + i] - image[c * plane + j];
            c2 += diff * diff;
          }
          t.a.push_back(i);
          t.b.push_back(j);
          t.kernel.push_back(std::exp(-d2 / sxy - c2 / srgb));
        }
      }
    }
  }
  return t;
}

}  // namespace

Tensor lsc_loss(const Tensor& pred, const Tensor& image, const LossConstants& k) {
  require_map(pred, image, "lsc_loss", "image");
  const std::size_t H = pred.dim(0), W = pred.dim(1);
  auto table = std::make_shared<PairTable>(lsc_pairs(image, H, W, k));
  const std::size_t n = table->kernel.size();
  Real total = 0.0;
  for (std::size_t q = 0; q < n; ++q) total += table->kernel[q] * std::abs(pred[table->a[q]] - pred[table->b[q]]);
  const Real loss = n ? total / static_cast<Real>(n) : 0.0;
  return record_op({1}, {loss}, {pred, image},
                   [pred, table, n](std::span<const Real> gy, std::span<std::vector<Real>*> grads) {
                     if (!grads[0] || n == 0) return;
                     auto& gp = *grads[0];
                     const Real scale = gy[0] / static_cast<Real>(n);
                     for (std::size_t q = 0; q < n; ++q) {
                       const std::size_t i = table->a[q], j = table->b[q];
                       const Real g = scale * table->kernel[q] * sign(pred[i] - pred[j]);
                       gp[i] += g;
                       gp[j] -= g;
                     }
                   });
}

Tensor smoothness_loss(const Tensor& pred, const Tensor& image, const LossConstants& k) {
  require_map(pred, image, "smoothness_loss", "image");
  const std::size_t H = pred.dim(0), W = pred.dim(1), plane = H * W;
  auto channel_mean_diff = [&](std::size_t i, std::size_t j) {
    Real s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += image[c * plane + j] - image[c * plane + i];
    return s / 3.0;
  };
  // attenuation per forward difference; zero where the difference falls off the map
  std::vector<Real> ax(plane, 0.0), ay(plane, 0.0);
  Real total = 0.0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t i = y * W + x;
      if (x + 1 < W) {
        ax[i] = std::exp(-k.smooth_alpha * std::abs(channel_mean_diff(i, i + 1)));
        total += std::abs(pred[i + 1] - pred[i]) * ax[i];
      }
      if (y + 1 < H) {
        ay[i] = std::exp(-k.smooth_alpha * std::abs(channel_mean_diff(i, i + W)));
        total += std::abs(pred[i + W] - pred[i]) * ay[i];
      }
    }
  }
  const Real loss = total / static_cast<Real>(plane);
  return record_op({1}, {loss}, {pred, image},
                   [pred, W, H, ax = std::move(ax), ay = std::move(ay)](std::span<const Real> gy,
                                                                         std::span<std::vector<Real>*> grads) {
                     if (!grads[0]) return;
                     auto& gp = *grads[0];
                     const Real scale = gy[0] / static_cast<Real>(H * W);
                     for (std::size_t y = 0; y < H; ++y) {
                       for (std::size_t x = 0; x < W; ++x) {
                         const std::size_t i = y * W + x;
                         if (x + 1 < W) {
                           const Real g = scale * ax[i] * sign(pred[i + 1] - pred[i]);
                           gp[i + 1] += g;
                           gp[i] -= g;
                         }
                         if (y + 1 < H) {
                           const Real g = scale * ay[i] * sign(pred[i + W] - pred[i]);
                           gp[i + W] += g;
                           gp[i] -= g;
                         }
                       }
                     }
                   });
}

Tensor total_loss(const Tensor& pred, const FocalStack& sample, Supervision mode, const LossConstants& k) {
  if (mode == Supervision::full) {
    if (!sample.gt.defined()) throw ContractError("full supervision requires a ground-truth mask for sample " + sample.id);
    return weighted_bce_iou(pred, sample.gt, k);
  }
  if (!sample.scribble.defined()) throw ContractError("weak supervision requires a scribble for sample " + sample.id);
  const Tensor pce = partial_ce(pred, sample.scribble, k);
  const Tensor lsc = lsc_loss(pred, sample.all_focus, k);
  const Tensor sm = smoothness_loss(pred, sample.all_focus, k);
  return combine({pce, scale(lsc, k.lambda_lsc), scale(sm, k.lambda_smooth)}, CombineMode::add);
}

}  // namespace lfsamba
