#pragma once

// Saliency evaluation: MAE, adaptive-threshold F-beta and PR curves.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lfsamba/tensor.hpp"

namespace lfsamba {

struct PrPoint {
  Real threshold = 0.0;
  Real precision = 0.0;
  Real recall = 0.0;
};

/// Mean |S − gt|.
Real mae(const Tensor& saliency, const Tensor& gt);

/// Precision/recall of {S ≥ i/(n−1)} for i = 0..n−1. Empty predictions have
/// precision 1. Returns nullopt when gt has no positive pixel.
std::optional<std::vector<PrPoint>> pr_curve(const Tensor& saliency, const Tensor& gt, std::size_t n_thresholds = 256);

/// F-beta at the adaptive threshold min(1, 2·mean(S)); pixels with S = 0 are
/// never positive. nullopt when gt is empty.
std::optional<Real> f_beta(const Tensor& saliency, const Tensor& gt, Real beta2 = 0.3);

struct EvalRow {
  std::string id;
  Real mae = 0.0;
  std::optional<Real> f_beta;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  Real mean_mae = 0.0;
  Real mean_f_beta = 0.0;
  std::size_t f_beta_count = 0;  // samples with a non-empty gt
  std::vector<PrPoint> curve;    // averaged over samples with a non-empty gt; empty when none
  std::vector<std::string> missing;  // ids lacking a prediction or a ground truth
};

/// Aggregates per-sample (id, S, gt) triples in the given order.
struct EvalAccumulator {
  void add(const std::string& id, const Tensor& saliency, const Tensor& gt);
  EvalReport finish() &&;

 private:
  EvalReport report_;
  std::vector<PrPoint> curve_sum_;
};

/// Compares pred_dir/<id>.png against gt_root/<id>/gt.png over the union of ids.
EvalReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_root);

/// Writes metrics.csv (id,mae,f_beta) and pr_curve.csv (threshold,precision,recall).
void write_report(const EvalReport& report, const std::filesystem::path& out_dir);

}  // namespace lfsamba
