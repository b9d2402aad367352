#include "lfsamba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "lfsamba/errors.hpp"
#include "lfsamba/image_io.hpp"

namespace lfsamba {

namespace {

void require_same(const Tensor& s, const Tensor& gt, const char* op) {
  if (s.shape() != gt.shape()) {
    throw DimensionError(std::string(op) + ": saliency " + shape_str(s.shape()) + " vs gt " + shape_str(gt.shape()));
  }
}

bool positive(Real g) { return g >= 0.5; }

}  // namespace

Real mae(const Tensor& s, const Tensor& gt) {
  require_same(s, gt, "mae");
  Real total = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) total += std::abs(s[i] - gt[i]);
  return total / static_cast<Real>(s.numel());
}

std::optional<std::vector<PrPoint>> pr_curve(const Tensor& s, const Tensor& gt, std::size_t n) {
  require_same(s, gt, "pr_curve");
  if (n < 2) throw ContractError("pr_curve: need at least two thresholds");
  std::size_t pos = 0;
  for (Real g : gt.data()) pos += positive(g);
  if (pos == 0) return std::nullopt;
  // histogram by the highest threshold index each value clears: S ≥ i/(n−1)
  std::vector<std::size_t> hist_tp(n, 0), hist_all(n, 0);
  const Real top = static_cast<Real>(n - 1);
  for (std::size_t i = 0; i < s.numel(); ++i) {
    const Real v = std::clamp(s[i], 0.0, 1.0);
    auto bin = static_cast<std::size_t>(std::floor(v * top));
    // guard against rounding: ensure bin/top <= v < (bin+1)/top
    while (bin + 1 < n && static_cast<Real>(bin + 1) / top <= v) ++bin;
    while (bin > 0 && static_cast<Real>(bin) / top > v) --bin;
    ++hist_all[bin];
    if (positive(gt[i])) ++hist_tp[bin];
  }
  std::vector<PrPoint> curve(n);
  std::size_t tp = 0, all = 0;
  for (std::size_t i = n; i-- > 0;) {
    tp += hist_tp[i];
    all += hist_all[i];
    curve[i].threshold = static_cast<Real>(i) / top;
    curve[i].precision = all ? static_cast<Real>(tp) / static_cast<Real>(all) : 1.0;
    curve[i].recall = static_cast<Real>(tp) / static_cast<Real>(pos);
  }
  return curve;
}

std::optional<Real> f_beta(const Tensor& s, const Tensor& gt, Real beta2) {
  require_same(s, gt, "f_beta");
  std::size_t pos = 0;
  Real sum = 0.0;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    pos += positive(gt[i]);
    sum += s[i];
  }
  if (pos == 0) return std::nullopt;
  const Real thr = std::min(1.0, 2.0 * sum / static_cast<Real>(s.numel()));
  std::size_t tp = 0, predicted = 0;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    if (s[i] > 0.0 && s[i] >= thr) {
      ++predicted;
      tp += positive(gt[i]);
    }
  }
  const Real precision = predicted ? static_cast<Real>(tp) / static_cast<Real>(predicted) : 1.0;
  const Real recall = static_cast<Real>(tp) / static_cast<Real>(pos);
  if (precision + recall == 0.0) return 0.0;
  const Real den = beta2 * precision + recall;
  return den > 0.0 ? (1.0 + beta2) * precision * recall / den : 0.0;
}

void EvalAccumulator::add(const std::string& id, const Tensor& s, const Tensor& gt) {
  EvalRow row{id, mae(s, gt), f_beta(s, gt)};
  if (auto curve = pr_curve(s, gt)) {
    if (curve_sum_.empty()) curve_sum_.assign(curve->size(), PrPoint{});
    for (std::size_t i = 0; i < curve->size(); ++i) {
      curve_sum_[i].threshold = (*curve)[i].threshold;
      curve_sum_[i].precision += (*curve)[i].precision;
      curve_sum_[i].recall += (*curve)[i].recall;
    }
  }
  report_.rows.push_back(std::move(row));
}

EvalReport EvalAccumulator::finish() && {
  EvalReport r = std::move(report_);
  for (const auto& row : r.rows) {
    r.mean_mae += row.mae;
    if (row.f_beta) {
      r.mean_f_beta += *row.f_beta;
      ++r.f_beta_count;
    }
  }
  if (!r.rows.empty()) r.mean_mae /= static_cast<Real>(r.rows.size());
  if (r.f_beta_count) {
    r.mean_f_beta /= static_cast<Real>(r.f_beta_count);
    r.curve = std::move(curve_sum_);
    for (auto& p : r.curve) {
      p.precision /= static_cast<Real>(r.f_beta_count);
      p.recall /= static_cast<Real>(r.f_beta_count);
    }
  }
  return r;
}

EvalReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_root) {
  namespace fs = std::filesystem;
  std::set<std::string> pred_ids, gt_ids;
  if (fs::is_directory(pred_dir)) {
    for (const auto& e : fs::directory_iterator(pred_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") pred_ids.insert(e.path().stem().string());
    }
  } else if (fs::exists(pred_dir)) {
    throw IoError("prediction path is not a directory: " + pred_dir.string());
  }
  if (fs::is_directory(gt_root)) {
    for (const auto& e : fs::directory_iterator(gt_root)) {
      if (e.is_directory() && fs::exists(e.path() / "gt.png")) gt_ids.insert(e.path().filename().string());
    }
  } else if (fs::exists(gt_root)) {
    throw IoError("ground-truth path is not a directory: " + gt_root.string());
  }
  std::set<std::string> all = pred_ids;
  all.insert(gt_ids.begin(), gt_ids.end());
  EvalAccumulator acc;
  std::vector<std::string> missing;
  for (const auto& id : all) {
    if (!pred_ids.count(id) || !gt_ids.count(id)) {
      missing.push_back(id);
      continue;
    }
    const Tensor raw_s = read_gray_raw(pred_dir / (id + ".png"));
    const Tensor raw_g = read_gray_raw(gt_root / id / "gt.png");
    std::vector<Real> s(raw_s.numel()), g(raw_g.numel());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = raw_s[i] / 255.0;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = raw_g[i] >= 128.0 ? 1.0 : 0.0;
    acc.add(id, Tensor::from(raw_s.shape(), std::move(s)), Tensor::from(raw_g.shape(), std::move(g)));
  }
  EvalReport report = std::move(acc).finish();
  report.missing = std::move(missing);
  return report;
}

void write_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.csv", std::ios::binary);
  std::ofstream curve(out_dir / "pr_curve.csv", std::ios::binary);
  if (!metrics || !curve) throw IoError("cannot write reports under " + out_dir.string());
  metrics.precision(17);
  curve.precision(17);
  metrics << "id,mae,f_beta\n";
  for (const auto& row : report.rows) {
    metrics << row.id << ',' << row.mae << ',';
    if (row.f_beta) metrics << *row.f_beta;
    metrics << '\n';
  }
  curve << "threshold,precision,recall\n";
  for (const auto& p : report.curve) curve << p.threshold << ',' << p.precision << ',' << p.recall << '\n';
  if (!metrics.flush() || !curve.flush()) throw IoError("failed writing reports under " + out_dir.string());
}

}  // namespace lfsamba
