#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lfsamba/errors.hpp"
#include "lfsamba/image_io.hpp"
#include "lfsamba/metrics.hpp"
#include "test_support.hpp"

using namespace lfsamba;
namespace fs = std::filesystem;

namespace {

Tensor binary(std::size_t n, std::uint64_t seed, Real rate = 0.3) {
  Rng rng(seed);
  std::vector<Real> v(n);
  for (auto& x : v) x = rng.uniform(0, 1) < rate ? 1.0 : 0.0;
  return Tensor::from({8, n / 8}, v);
}

// Saliency values drawn partly from the threshold grid itself so that ties at
// S == i/255 are exercised.
Tensor saliency(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Real> v(64);
  for (auto& x : v) {
    const Real u = rng.uniform(0, 1);
    x = u < 0.3 ? static_cast<Real>(rng.index(256)) / 255.0 : (u < 0.4 ? 0.0 : rng.uniform(0, 1));
  }
  return Tensor::from({8, 8}, v);
}

struct Counts {
  std::size_t tp = 0, predicted = 0, pos = 0;
};

Counts count_at(const Tensor& s, const Tensor& g, auto predicate) {
  Counts c;
  for (std::size_t i = 0; i < s.numel(); ++i) {
    const bool p = predicate(s[i]), t = g[i] >= 0.5;
    c.pos += t;
    c.predicted += p;
    c.tp += p && t;
  }
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lfsamba_metrics_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_gray(const fs::path& path, const std::vector<std::uint8_t>& px, std::size_t h, std::size_t w) {
  fs::create_directories(path.parent_path());
  write_png(path, Image8{w, h, 1, px});
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("mae: identity, complement, constant half") {
  const Tensor g = binary(64, 1);
  CHECK(mae(g, g) == 0.0);
  std::vector<Real> inv(64);
  for (std::size_t i = 0; i < 64; ++i) inv[i] = 1.0 - g[i];
  CHECK(mae(Tensor::from({8, 8}, inv), g) == 1.0);
  CHECK(mae(Tensor::full({8, 8}, 0.5), g) == 0.5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor s = saliency(seed), gt = binary(64, seed + 100);
    std::vector<Real> cs(64), cg(64);
    for (std::size_t i = 0; i < 64; ++i) {
      cs[i] = 1.0 - s[i];
      cg[i] = 1.0 - gt[i];
    }
    CHECK(mae(s, gt) == doctest::Approx(mae(Tensor::from({8, 8}, cs), Tensor::from({8, 8}, cg))).epsilon(1e-15));
  }
  CHECK_THROWS_AS(mae(Tensor::zeros({8, 8}), Tensor::zeros({4, 16})), DimensionError);
}

TEST_CASE("pr_curve: exhaustive threshold counting oracle on random 8x8 maps") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Tensor s = saliency(seed), g = binary(64, 1000 + seed);
    const auto curve = pr_curve(s, g);
    if (count_at(s, g, [](Real) { return false; }).pos == 0) {
      CHECK_FALSE(curve.has_value());
      continue;
    }
    REQUIRE(curve.has_value());
    REQUIRE(curve->size() == 256);
    for (std::size_t i = 0; i < 256; ++i) {
      const Real t = static_cast<Real>(i) / 255.0;
      const Counts c = count_at(s, g, [&](Real v) { return v >= t; });
      const Real precision = c.predicted ? static_cast<Real>(c.tp) / static_cast<Real>(c.predicted) : 1.0;
      const Real recall = static_cast<Real>(c.tp) / static_cast<Real>(c.pos);
      CHECK((*curve)[i].threshold == t);
      CHECK((*curve)[i].precision == precision);
      CHECK((*curve)[i].recall == recall);
      if (i > 0) CHECK((*curve)[i].recall <= (*curve)[i - 1].recall);
    }
  }
}

TEST_CASE("pr_curve: fixed cases") {
  const Tensor g = binary(64, 7);
  const auto same = pr_curve(g, g);
  for (std::size_t i = 1; i < 256; ++i) {
    CHECK((*same)[i].precision == 1.0);
    CHECK((*same)[i].recall == 1.0);
  }
  const auto none = pr_curve(Tensor::zeros({8, 8}), g);
  for (std::size_t i = 1; i < 256; ++i) {
    CHECK((*none)[i].precision == 1.0);
    CHECK((*none)[i].recall == 0.0);
  }
  // three pixels: S = (0.2, 0.6, 0.9), gt = (1, 0, 1)
  const auto three = pr_curve(Tensor::from({1, 3}, {0.2, 0.6, 0.9}), Tensor::from({1, 3}, {1.0, 0.0, 1.0}));
  CHECK((*three)[0].precision == doctest::Approx(2.0 / 3.0));
  CHECK((*three)[0].recall == 1.0);
  CHECK((*three)[100].precision == 0.5);  // t ≈ 0.392: {0.6, 0.9}
  CHECK((*three)[100].recall == 0.5);
  CHECK((*three)[200].precision == 1.0);  // t ≈ 0.784: {0.9}
  CHECK((*three)[200].recall == 0.5);
  CHECK((*three)[255].precision == 1.0);  // nothing predicted
  CHECK((*three)[255].recall == 0.0);
  CHECK_FALSE(pr_curve(Tensor::full({2, 2}, 0.7), Tensor::zeros({2, 2})).has_value());
}

TEST_CASE("f_beta: counting oracle at the adaptive threshold") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Tensor s = saliency(seed + 500), g = binary(64, 2000 + seed);
    const auto fb = f_beta(s, g);
    Real mean = 0.0;
    for (Real v : lfsamba::test::values(s)) mean += v;
    mean /= 64.0;
    const Real thr = std::min(1.0, 2.0 * mean);
    const Counts c = count_at(s, g, [&](Real v) { return v > 0.0 && v >= thr; });
    if (c.pos == 0) {
      CHECK_FALSE(fb.has_value());
      continue;
    }
    const Real p = c.predicted ? static_cast<Real>(c.tp) / static_cast<Real>(c.predicted) : 1.0;
    const Real r = static_cast<Real>(c.tp) / static_cast<Real>(c.pos);
    const Real expect = p + r == 0.0 ? 0.0 : 1.3 * p * r / (0.3 * p + r);
    CHECK(*fb == expect);
    CHECK(*fb >= 0.0);
    CHECK(*fb <= 1.0);
  }
}

TEST_CASE("f_beta: fixed cases") {
  const Tensor g = binary(64, 9);
  CHECK(*f_beta(g, g) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(*f_beta(Tensor::zeros({8, 8}), g) == 0.0);
  // P = 0.5, R = 1
  const Real v = *f_beta(Tensor::from({1, 4}, {1.0, 1.0, 0.0, 0.0}), Tensor::from({1, 4}, {1.0, 0.0, 0.0, 0.0}));
  CHECK(v == doctest::Approx(0.65 / 1.15).epsilon(1e-14));
  CHECK(v == doctest::Approx(0.5652).epsilon(1e-4));
}

TEST_CASE("evaluate_dataset: two-sample hand averages and CSV format") {
  const fs::path root = scratch("two");
  const fs::path gt = root / "gt", pred = root / "pred", out = root / "out";
  // a: perfect; b: half-gray prediction on a one-pixel foreground
  write_gray(gt / "a" / "gt.png", {255, 0, 0, 255}, 2, 2);
  write_gray(pred / "a.png", {255, 0, 0, 255}, 2, 2);
  write_gray(gt / "b" / "gt.png", {255, 0, 0, 0}, 2, 2);
  write_gray(pred / "b.png", {255, 255, 0, 0}, 2, 2);
  // unmatched on both sides
  write_gray(gt / "c" / "gt.png", {0, 0, 0, 0}, 2, 2);
  write_gray(pred / "d.png", {0, 0, 0, 0}, 2, 2);

  const EvalReport r = evaluate_dataset(pred, gt);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].id == "a");
  CHECK(r.rows[0].mae == 0.0);
  CHECK(*r.rows[0].f_beta == doctest::Approx(1.0));
  CHECK(r.rows[1].mae == 0.25);
  CHECK(*r.rows[1].f_beta == doctest::Approx(0.65 / 1.15));
  CHECK(r.mean_mae == 0.125);
  CHECK(r.mean_f_beta == doctest::Approx((1.0 + 0.65 / 1.15) / 2.0));
  CHECK(r.missing == std::vector<std::string>{"c", "d"});
  REQUIRE(r.curve.size() == 256);
  CHECK(r.curve[128].precision == doctest::Approx(0.75));
  CHECK(r.curve[128].recall == 1.0);

  write_report(r, out);
  const auto m = lines(out / "metrics.csv");
  REQUIRE(m.size() == 3);
  CHECK(m[0] == "id,mae,f_beta");
  CHECK(m[1].rfind("a,0,", 0) == 0);
  CHECK(m[2].rfind("b,0.25,", 0) == 0);
  const auto c = lines(out / "pr_curve.csv");
  REQUIRE(c.size() == 257);
  CHECK(c[0] == "threshold,precision,recall");
  CHECK(c[1].rfind("0,", 0) == 0);
  CHECK(c[256].rfind("1,", 0) == 0);
}

TEST_CASE("evaluate_dataset: identical predictions and empty inputs") {
  const fs::path root = scratch("same");
  for (int i = 0; i < 3; ++i) {
    std::vector<std::uint8_t> px(16, 0);
    px[i] = px[i + 5] = 255;
    write_gray(root / "gt" / ("s" + std::to_string(i)) / "gt.png", px, 4, 4);
    write_gray(root / "pred" / ("s" + std::to_string(i) + ".png"), px, 4, 4);
  }
  const EvalReport r = evaluate_dataset(root / "pred", root / "gt");
  CHECK(r.rows.size() == 3);
  CHECK(r.mean_mae == 0.0);
  CHECK(r.mean_f_beta == doctest::Approx(1.0));
  CHECK(r.missing.empty());

  const fs::path empty = scratch("empty");
  fs::create_directories(empty / "pred");
  fs::create_directories(empty / "gt");
  const EvalReport e = evaluate_dataset(empty / "pred", empty / "gt");
  CHECK(e.rows.empty());
  CHECK(e.curve.empty());
  write_report(e, empty / "out");
  CHECK(lines(empty / "out" / "metrics.csv") == std::vector<std::string>{"id,mae,f_beta"});
  CHECK(lines(empty / "out" / "pr_curve.csv") == std::vector<std::string>{"threshold,precision,recall"});
}

TEST_CASE("evaluate_dataset: empty gt counts for MAE only") {
  const fs::path root = scratch("emptygt");
  write_gray(root / "gt" / "z" / "gt.png", {0, 0, 0, 0}, 2, 2);
  write_gray(root / "pred" / "z.png", {0, 0, 255, 0}, 2, 2);
  const EvalReport r = evaluate_dataset(root / "pred", root / "gt");
  REQUIRE(r.rows.size() == 1);
  CHECK(r.mean_mae == 0.25);
  CHECK_FALSE(r.rows[0].f_beta.has_value());
  CHECK(r.f_beta_count == 0);
  write_report(r, root / "out");
  CHECK(lines(root / "out" / "metrics.csv")[1] == "z,0.25,");
}
