#include "lfsamba/scan_geometry.hpp"

#include <algorithm>

#include "lfsamba/errors.hpp"
#include "lfsamba/ops.hpp"

namespace lfsamba {

std::string ScanDirection::name() const {
  std::string s = axis_major == ScanAxis::row ? "row" : "col";
  return s + (orientation == ScanOrientation::forward ? "_fwd" : "_bwd");
}

std::vector<std::size_t> scan_order(std::size_t rows, std::size_t cols, ScanDirection dir) {
  std::vector<std::size_t> order(rows * cols);
  for (std::size_t t = 0; t < order.size(); ++t) {
    if (dir.axis_major == ScanAxis::row) {
      order[t] = t;
    } else {
      const std::size_t r = t % rows, s = t / rows;
      order[t] = r * cols + s;
    }
  }
  if (dir.orientation == ScanOrientation::backward) std::reverse(order.begin(), order.end());
  return order;
}

Tensor unfold(const Tensor& grid, ScanDirection dir) {
  if (grid.rank() != 3) throw DimensionError("unfold: expected [C,R,S], got " + shape_str(grid.shape()));
  const std::size_t C = grid.dim(0), R = grid.dim(1), S = grid.dim(2), L = R * S;
  const auto order = scan_order(R, S, dir);
  std::vector<std::size_t> idx(L * C);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) idx[t * C + c] = c * L + order[t];
  }
  return gather(grid, idx, {L, C});
}

Tensor fold(const Tensor& seq, ScanDirection dir, std::size_t rows, std::size_t cols) {
  if (seq.rank() != 2 || seq.dim(0) != rows * cols) {
    throw DimensionError("fold: sequence " + shape_str(seq.shape()) + " does not match grid " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  const std::size_t C = seq.dim(1), L = rows * cols;
  const auto order = scan_order(rows, cols, dir);
  std::vector<std::size_t> idx(L * C);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t c = 0; c < C; ++c) idx[c * L + order[t]] = t * C + c;
  }
  return gather(seq, idx, {C, rows, cols});
}

DirectionalScanParams DirectionalScanParams::init(std::size_t channels, std::size_t states, Rng& rng) {
  DirectionalScanParams p;
  for (auto& b : p.blocks) b = SsmBlockParams::init(channels, states, rng);
  return p;
}

void DirectionalScanParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(join_name(prefix, kScanDirections[i].name()), fn);
}

Tensor ss2d_direction(const Tensor& x, const DirectionalScanParams& params, std::size_t direction) {
  if (x.rank() != 3) throw DimensionError("ss2d: expected [C,H,W], got " + shape_str(x.shape()));
  const ScanDirection dir = kScanDirections.at(direction);
  return fold(selective_scan(unfold(x, dir), params.blocks[direction]), dir, x.dim(1), x.dim(2));
}

Tensor ss2d(const Tensor& x, const DirectionalScanParams& params) {
  std::vector<Tensor> parts;
  parts.reserve(kScanDirections.size());
  for (std::size_t i = 0; i < kScanDirections.size(); ++i) parts.push_back(ss2d_direction(x, params, i));
  return combine(parts, CombineMode::add);
}

Tensor slices_to_grid(const std::vector<Tensor>& slices) {
  if (slices.empty()) throw ContractError("fss2d: no slices");
  for (const auto& s : slices) {
    if (s.rank() != 3 || s.shape() != slices.front().shape()) {
      throw DimensionError("fss2d: inconsistent slice shapes " + shape_str(slices.front().shape()) + " vs " +
                           shape_str(s.shape()));
    }
  }
  const std::size_t K = slices.size(), C = slices.front().dim(0);
  const std::size_t L = slices.front().dim(1) * slices.front().dim(2);
  const Tensor stacked = combine(slices, CombineMode::stack_new_axis);  // [K, C, L]
  std::vector<std::size_t> idx(C * K * L);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t l = 0; l < L; ++l) idx[(c * K + k) * L + l] = (k * C + c) * L + l;
    }
  }
  return gather(stacked, idx, {C, K, L});
}

std::vector<Tensor> grid_to_slices(const Tensor& grid, std::size_t height, std::size_t width) {
  if (grid.rank() != 3 || grid.dim(2) != height * width) {
    throw DimensionError("fss2d: grid " + shape_str(grid.shape()) + " does not match slice size " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t C = grid.dim(0), K = grid.dim(1), L = grid.dim(2);
  std::vector<Tensor> out;
  out.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<std::size_t> idx(C * L);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t l = 0; l < L; ++l) idx[c * L + l] = (c * K + k) * L + l;
    }
    out.push_back(gather(grid, idx, {C, height, width}));
  }
  return out;
}

std::vector<Tensor> fss2d(const std::vector<Tensor>& slices, const DirectionalScanParams& params) {
  const Tensor grid = slices_to_grid(slices);
  return grid_to_slices(ss2d(grid, params), slices.front().dim(1), slices.front().dim(2));
}

}  // namespace lfsamba
