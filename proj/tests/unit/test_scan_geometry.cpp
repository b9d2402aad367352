#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "lfsamba/errors.hpp"
#include "lfsamba/scan_geometry.hpp"
#include "test_support.hpp"

using namespace lfsamba;
using lfsamba::test::bitwise_equal;
using lfsamba::test::max_abs_diff;
using lfsamba::test::random_tensor;
using lfsamba::test::randomize;

namespace {

constexpr ScanDirection kRowF = kScanDirections[0];
constexpr ScanDirection kColF = kScanDirections[1];
constexpr ScanDirection kRowB = kScanDirections[2];
constexpr ScanDirection kColB = kScanDirections[3];

DirectionalScanParams random_dirs(std::size_t d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  auto p = DirectionalScanParams::init(d, n, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    randomize(p.blocks[i].d_skip, seed * 10 + i, -1.0, 1.0);
    randomize(p.blocks[i].dt_bias, seed * 10 + i + 5, -2.0, 0.0);
  }
  return p;
}

// [C,R,S] -> [C,S,R]
Tensor transpose_grid(const Tensor& x) {
  const std::size_t C = x.dim(0), R = x.dim(1), S = x.dim(2);
  std::vector<Real> v(x.numel());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t s = 0; s < S; ++s) v[(c * S + s) * R + r] = x[(c * R + r) * S + s];
  return Tensor::from({C, S, R}, v);
}

// Explicit per-token unfold used as an oracle: independent of scan_order.
std::vector<std::pair<std::size_t, std::size_t>> visit_pairs(std::size_t R, std::size_t S, ScanDirection dir) {
  std::vector<std::pair<std::size_t, std::size_t>> v;
  if (dir.axis_major == ScanAxis::row) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t s = 0; s < S; ++s) v.emplace_back(r, s);
  } else {
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t r = 0; r < R; ++r) v.emplace_back(r, s);
  }
  if (dir.orientation == ScanOrientation::backward) std::reverse(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("directions: four distinct names in merge order") {
  CHECK(kRowF.name() == "row_fwd");
  CHECK(kColF.name() == "col_fwd");
  CHECK(kRowB.name() == "row_bwd");
  CHECK(kColB.name() == "col_bwd");
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) CHECK_FALSE(kScanDirections[i] == kScanDirections[j]);
}

TEST_CASE("scan_order on a 2x2 grid") {
  CHECK(scan_order(2, 2, kRowF) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(scan_order(2, 2, kColF) == std::vector<std::size_t>{0, 2, 1, 3});
  for (auto [f, b] : {std::pair{kRowF, kRowB}, std::pair{kColF, kColB}}) {
    auto fwd = scan_order(3, 5, f);
    std::reverse(fwd.begin(), fwd.end());
    CHECK(fwd == scan_order(3, 5, b));
  }
}

TEST_CASE("unfold matches explicit visit order") {
  const Tensor x = random_tensor({2, 3, 4}, 1);
  for (auto dir : kScanDirections) {
    const Tensor seq = unfold(x, dir);
    const auto pairs = visit_pairs(3, 4, dir);
    for (std::size_t t = 0; t < pairs.size(); ++t)
      for (std::size_t c = 0; c < 2; ++c) CHECK(seq[t * 2 + c] == x[(c * 3 + pairs[t].first) * 4 + pairs[t].second]);
  }
}

TEST_CASE("fold inverts unfold exhaustively up to 8x8") {
  for (std::size_t R = 1; R <= 8; ++R) {
    for (std::size_t S = 1; S <= 8; ++S) {
      const Tensor x = random_tensor({2, R, S}, R * 100 + S);
      for (auto dir : kScanDirections) {
        const auto order = scan_order(R, S, dir);
        std::vector<std::size_t> sorted = order;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> iota(R * S);
        std::iota(iota.begin(), iota.end(), 0);
        CHECK(sorted == iota);
        CHECK(bitwise_equal(fold(unfold(x, dir), dir, R, S), x));
      }
    }
  }
}

TEST_CASE("fold: constant sequence, length mismatch, permutation mismatch probe") {
  const Tensor c = fold(Tensor::full({6, 2}, 0.3), kColB, 2, 3);
  for (Real v : c.data()) CHECK(v == 0.3);
  CHECK_THROWS_AS(fold(Tensor::zeros({5, 2}), kRowF, 2, 3), DimensionError);
  const Tensor probe = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  const Tensor mixed = fold(unfold(probe, kRowF), kColF, 2, 2);
  CHECK_FALSE(bitwise_equal(mixed, probe));
  CHECK(mixed[1] == 3.0);
  CHECK(mixed[2] == 2.0);
}

TEST_CASE("ss2d: zero input, 1x1 degeneracy, composition oracle") {
  const auto p = random_dirs(3, 4, 7);
  for (Real v : lfsamba::test::values(ss2d(Tensor::zeros({3, 2, 3}), p))) CHECK(v == 0.0);

  DirectionalScanParams tied = p;
  for (auto& b : tied.blocks) b = p.blocks[0];
  const Tensor x1 = random_tensor({3, 1, 1}, 3);
  const Tensor y1 = ss2d(x1, tied);
  const Tensor single = selective_scan(reshape(x1, {1, 3}), p.blocks[0]);
  for (std::size_t c = 0; c < 3; ++c) CHECK(y1[c] == doctest::Approx(4.0 * single[c]).epsilon(1e-14));

  const Tensor x = random_tensor({3, 2, 3}, 11);
  std::vector<Real> expect(x.numel(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto dir = kScanDirections[i];
    const Tensor seq = reference::selective_scan_sequential(unfold(x, dir), p.blocks[i]);
    const auto pairs = visit_pairs(2, 3, dir);
    for (std::size_t t = 0; t < pairs.size(); ++t)
      for (std::size_t c = 0; c < 3; ++c) expect[(c * 2 + pairs[t].first) * 3 + pairs[t].second] += seq[t * 3 + c];
  }
  CHECK(max_abs_diff(ss2d(x, p), Tensor::from(x.shape(), expect)) <= 1e-12);
}

TEST_CASE("ss2d: transpose equivariance with row/column parameter swap") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = random_dirs(2, 3, 20 + seed);
    DirectionalScanParams swapped = p;
    std::swap(swapped.blocks[0], swapped.blocks[1]);
    std::swap(swapped.blocks[2], swapped.blocks[3]);
    const Tensor x = random_tensor({2, 3, 5}, 30 + seed);
    const Tensor lhs = transpose_grid(ss2d(x, p));
    const Tensor rhs = ss2d(transpose_grid(x), swapped);
    CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
  }
}

TEST_CASE("ss2d: gradcheck through all four directions") {
  auto p = random_dirs(2, 2, 3);
  const Tensor x = lfsamba::test::random_param({2, 2, 3}, 4);
  std::vector<Tensor> in{x, p.blocks[1].w_c, p.blocks[2].a_log, p.blocks[3].w_dt_up};
  CHECK(gradcheck([&] { return lfsamba::test::probe_loss(ss2d(x, p)); }, in).pass);
}

TEST_CASE("fss2d: K=3 integrated grid and column interleaving") {
  std::vector<Tensor> slices;
  for (std::size_t k = 0; k < 3; ++k) slices.push_back(random_tensor({2, 2, 2}, 40 + k));
  const Tensor grid = slices_to_grid(slices);
  CHECK(grid.shape() == Shape{2, 3, 4});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t l = 0; l < 4; ++l) CHECK(grid[(c * 3 + k) * 4 + l] == slices[k][c * 4 + l]);

  // column-forward: slice 1, 2, 3 at token 0, then token 1, ...
  const auto order = scan_order(3, 4, kColF);
  for (std::size_t t = 0; t < 12; ++t) {
    CHECK(order[t] / 4 == t % 3);
    CHECK(order[t] % 4 == t / 3);
  }

  const auto back = grid_to_slices(grid, 2, 2);
  for (std::size_t k = 0; k < 3; ++k) CHECK(bitwise_equal(back[k], slices[k]));

  const auto p = random_dirs(2, 3, 5);
  const auto out = fss2d(slices, p);
  CHECK(out.size() == 3);
  const auto direct = grid_to_slices(ss2d(grid, p), 2, 2);
  for (std::size_t k = 0; k < 3; ++k) CHECK(bitwise_equal(out[k], direct[k]));
}

TEST_CASE("fss2d: K=1 pairwise-tied degeneracy") {
  auto p = random_dirs(3, 4, 9);
  p.blocks[1] = p.blocks[0];
  p.blocks[3] = p.blocks[2];
  const Tensor s = random_tensor({3, 2, 3}, 12);
  const auto out = fss2d({s}, p);
  CHECK(bitwise_equal(unfold(reshape(s, {3, 1, 6}), kRowF), unfold(reshape(s, {3, 1, 6}), kColF)));

  const Tensor g = reshape(s, {3, 1, 6});
  const Tensor yf = fold(selective_scan(unfold(g, kRowF), p.blocks[0]), kRowF, 1, 6);
  const Tensor yb = fold(selective_scan(unfold(g, kRowB), p.blocks[2]), kRowB, 1, 6);
  const Tensor expect = reshape(combine({yf, yf, yb, yb}, CombineMode::add), {3, 2, 3});
  CHECK(bitwise_equal(out[0], expect));
  for (std::size_t i = 0; i < expect.numel(); ++i) {
    CHECK(out[0][i] == doctest::Approx(2.0 * (yf[i] + yb[i])).epsilon(1e-13));
  }
}

TEST_CASE("fss2d: zeros, inconsistent shapes, empty list") {
  const auto p = random_dirs(2, 2, 1);
  for (const auto& o : fss2d({Tensor::zeros({2, 2, 2}), Tensor::zeros({2, 2, 2})}, p))
    for (Real v : o.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(fss2d({Tensor::zeros({2, 2, 2}), Tensor::zeros({2, 2, 3})}, p), DimensionError);
  CHECK_THROWS_AS(fss2d({}, p), ContractError);
}

TEST_CASE("fss2d: single-direction causal footprint") {
  // keep only row-forward: a perturbation at (k, j) reaches later tokens of
  // slice k only; column-forward alone reaches everything after it in
  // column-major order.
  const std::size_t K = 3, h = 2, w = 2, L = h * w;
  for (std::size_t live : {0u, 1u}) {
    auto p = random_dirs(2, 2, 14);
    for (std::size_t i = 0; i < 4; ++i) {
      if (i == live) continue;
      for (Tensor* t : {&p.blocks[i].w_c, &p.blocks[i].d_skip}) {
        auto v = t->mutable_data();
        std::fill(v.begin(), v.end(), 0.0);
      }
    }
    std::vector<Tensor> slices;
    for (std::size_t k = 0; k < K; ++k) slices.push_back(random_tensor({2, h, w}, 70 + k));
    const auto base = fss2d(slices, p);
    const std::size_t pk = 1, pj = 1;
    auto pert = slices;
    std::vector<Real> v(pert[pk].data().begin(), pert[pk].data().end());
    v[pj] += 1.0;  // channel 0, token pj
    pert[pk] = Tensor::from({2, h, w}, v);
    const auto moved = fss2d(pert, p);
    const auto order = scan_order(K, L, kScanDirections[live]);
    const std::size_t src = pk * L + pj;
    const std::size_t src_pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), src) - order.begin());
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t l = 0; l < L; ++l) {
        const std::size_t pos =
            static_cast<std::size_t>(std::find(order.begin(), order.end(), k * L + l) - order.begin());
        const bool changed = base[k][l] != moved[k][l] || base[k][L + l] != moved[k][L + l];
        if (pos < src_pos) CHECK_FALSE(changed);
        if (pos >= src_pos) CHECK(changed);
      }
    }
  }
}
