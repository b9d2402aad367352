#pragma once

// Four-direction scanning of 2D token grids.
//
// A grid [C, R, S] is unfolded into a sequence [R·S, C] in one of four total
// orders (row-major or column-major, forward or reversed), scanned by that
// direction's S6 block, folded back and summed.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "lfsamba/ssm.hpp"

namespace lfsamba {

enum class ScanAxis { row, column };
enum class ScanOrientation { forward, backward };

struct ScanDirection {
  ScanAxis axis_major = ScanAxis::row;
  ScanOrientation orientation = ScanOrientation::forward;

  bool operator==(const ScanDirection&) const = default;
  std::string name() const;
};

/// Merge order of the directional outputs: row-f, col-f, row-b, col-b.
inline constexpr std::array<ScanDirection, 4> kScanDirections{{
    {ScanAxis::row, ScanOrientation::forward},
    {ScanAxis::column, ScanOrientation::forward},
    {ScanAxis::row, ScanOrientation::backward},
    {ScanAxis::column, ScanOrientation::backward},
}};

/// Flat grid positions (r·S + s) in visit order.
std::vector<std::size_t> scan_order(std::size_t rows, std::size_t cols, ScanDirection dir);

/// [C, R, S] -> [R·S, C] in the direction's order.
Tensor unfold(const Tensor& grid, ScanDirection dir);

/// [R·S, C] -> [C, R, S]; exact inverse of unfold for the same direction.
Tensor fold(const Tensor& seq, ScanDirection dir, std::size_t rows, std::size_t cols);

/// One S6 block per direction, indexed like kScanDirections.
struct DirectionalScanParams {
  std::array<SsmBlockParams, 4> blocks;

  std::size_t channels() const { return blocks[0].channels(); }
  std::size_t states() const { return blocks[0].states(); }

  static DirectionalScanParams init(std::size_t channels, std::size_t states, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Sum over directions of fold(selective_scan(unfold(x, dir))).
Tensor ss2d(const Tensor& x, const DirectionalScanParams& params);

/// Single-direction term of ss2d.
Tensor ss2d_direction(const Tensor& x, const DirectionalScanParams& params, std::size_t direction);

/// Stacks K slice maps [C,h,w] into a [C, K, h·w] grid whose rows are slices
/// in depth order, runs ss2d over it and splits the result back per slice.
std::vector<Tensor> fss2d(const std::vector<Tensor>& slices, const DirectionalScanParams& params);

/// The integrated [C, K, h·w] grid used by fss2d, and its inverse.
Tensor slices_to_grid(const std::vector<Tensor>& slices);
std::vector<Tensor> grid_to_slices(const Tensor& grid, std::size_t height, std::size_t width);

}  // namespace lfsamba
