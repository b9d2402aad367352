#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lfsamba/errors.hpp"
#include "lfsamba/ssm.hpp"
#include "test_support.hpp"

using namespace lfsamba;
using lfsamba::test::max_rel_diff;
using lfsamba::test::random_tensor;
using lfsamba::test::randomize;

namespace {

SsmBlockParams random_block(std::size_t d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  SsmBlockParams p = SsmBlockParams::init(d, n, rng);
  // perturb away from the structured init so every parameter matters
  randomize(p.a_log, seed + 1, -0.5, 1.0);
  randomize(p.dt_bias, seed + 2, -2.0, 0.5);
  randomize(p.d_skip, seed + 3, -1.0, 1.0);
  return p;
}

/// d = N = 1 block with A = -1, B = C = 1, D = 0 and Δ ≡ ln 2 for every input.
SsmBlockParams scalar_block() {
  SsmBlockParams p;
  p.a_log = Tensor::parameter({1, 1}, {0.0});
  p.w_b = Tensor::parameter({1, 1}, {0.0});
  p.w_c = Tensor::parameter({1, 1}, {0.0});
  p.w_dt_down = Tensor::parameter({1, 1}, {0.0});
  p.w_dt_up = Tensor::parameter({1, 1}, {0.0});
  p.dt_bias = Tensor::parameter({1}, {0.0});
  p.d_skip = Tensor::parameter({1}, {0.0});
  return p;
}

}  // namespace

TEST_CASE("init: stable A, positive step, unit skip") {
  Rng rng(4);
  const SsmBlockParams p = SsmBlockParams::init(32, 8, rng);
  CHECK(p.dt_rank() == 2);
  CHECK(dt_rank_for(8) == 1);
  const Tensor a = state_matrix(p);
  for (std::size_t c = 0; c < 32; ++c)
    for (std::size_t n = 0; n < 8; ++n) CHECK(a[c * 8 + n] == doctest::Approx(-static_cast<Real>(n + 1)).epsilon(1e-6));
  for (Real b : p.dt_bias.data()) {
    const Real dt = softplus_scalar(b);
    CHECK(dt >= 1e-3 * 0.999);
    CHECK(dt <= 1e-1 * 1.001);
  }
  for (Real v : p.d_skip.data()) CHECK(v == 1.0);
}

TEST_CASE("project_params: zero input, softplus(0), shapes") {
  const SsmBlockParams p = random_block(4, 8, 1);
  const auto z = project_params(Tensor::zeros({5, 4}), p);
  CHECK(z.delta.shape() == Shape{5, 4});
  CHECK(z.b.shape() == Shape{5, 8});
  CHECK(z.c.shape() == Shape{5, 8});
  for (Real v : z.b.data()) CHECK(v == 0.0);
  for (Real v : z.c.data()) CHECK(v == 0.0);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(z.delta[t * 4 + c] > 0.0);
      CHECK(z.delta[t * 4 + c] == doctest::Approx(std::log1p(std::exp(p.dt_bias[c]))));
    }

  SsmBlockParams q = p;
  q.dt_bias = Tensor::zeros({4});
  const auto ln2 = project_params(Tensor::zeros({3, 4}), q);
  for (Real v : ln2.delta.data()) CHECK(v == doctest::Approx(0.6931).epsilon(1e-4));

  // Δ stays positive for large negative pre-activations
  const auto big = project_params(random_tensor({6, 4}, 9, -50.0, 50.0), p);
  for (Real v : big.delta.data()) CHECK(v > 0.0);
}

TEST_CASE("discretize: limits and scalar exponential") {
  const Tensor a = Tensor::from({2, 2}, {-1.0, -3.0, 0.0, 0.0});
  const auto tiny = discretize(Tensor::full({1, 2}, 1e-12), a, Tensor::full({1, 2}, 2.0));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(tiny.a_bar[i] == doctest::Approx(1.0));
    CHECK(tiny.b_bar[i] == doctest::Approx(0.0));
  }
  const auto zrow = discretize(Tensor::full({1, 2}, 0.7), a, Tensor::full({1, 2}, 1.0));
  CHECK(zrow.a_bar[2] == 1.0);
  CHECK(zrow.a_bar[3] == 1.0);

  const Real ln2 = std::log(2.0);
  const auto s = discretize(Tensor::from({1, 1}, {ln2}), Tensor::from({1, 1}, {-1.0}), Tensor::from({1, 1}, {1.0}));
  CHECK(s.a_bar[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s.b_bar[0] == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("sequential oracle: zero input, hand-unrolled recurrence, single step") {
  const SsmBlockParams p = random_block(3, 4, 2);
  for (Real v : lfsamba::test::values(reference::selective_scan_sequential(Tensor::zeros({7, 3}), p))) CHECK(v == 0.0);

  // With W_B = W_C = 0 projections vanish, so drive B and C through the
  // external-C path: B comes from W_B, C is supplied directly.
  SsmBlockParams s = scalar_block();
  assign_rounded(s.w_b, std::vector<Real>{1.0});  // B_t = u_t = 1
  const Tensor u = Tensor::from({2, 1}, {1.0, 1.0});
  const Tensor c = Tensor::from({2, 1}, {1.0, 1.0});
  const Tensor y = reference::selective_scan_sequential(u, c, s);
  const Real h1 = std::log(2.0);
  const Real h2 = 0.5 * h1 + std::log(2.0);
  CHECK(y[0] == doctest::Approx(h1).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(h2).epsilon(1e-12));
  CHECK(y[0] == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(y[1] == doctest::Approx(1.0397).epsilon(1e-4));
  const Tensor yf = selective_scan_with_output_matrix(u, c, s);
  CHECK(max_rel_diff(yf, y) <= 1e-12);

  // single step: y_1 = <C_1, Δ_1 B_1 u_1> + D u_1 with an independent projection
  const SsmBlockParams q = random_block(2, 3, 3);
  const Tensor u1 = random_tensor({1, 2}, 4);
  const Tensor y1 = reference::selective_scan_sequential(u1, q);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    Real low = 0.0;
    for (std::size_t k = 0; k < 2; ++k) low += q.w_dt_down[k] * u1[k];
    const Real dt = std::log1p(std::exp(q.w_dt_up[ch] * low + q.dt_bias[ch]));
    Real dot = 0.0;
    for (std::size_t n = 0; n < 3; ++n) {
      Real bn = 0.0, cn = 0.0;
      for (std::size_t k = 0; k < 2; ++k) {
        bn += q.w_b[n * 2 + k] * u1[k];
        cn += q.w_c[n * 2 + k] * u1[k];
      }
      dot += cn * dt * bn * u1[ch];
    }
    CHECK(y1[ch] == doctest::Approx(dot + q.d_skip[ch] * u1[ch]).epsilon(1e-12));
  }
}

TEST_CASE("selective_scan matches the sequential oracle on 100 random instances") {
  Rng pick(2024);
  Real worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const std::size_t T = 1 + pick.index(64), d = 1 + pick.index(8), n = 1 + pick.index(8);
    const SsmBlockParams p = random_block(d, n, 100 + i);
    const Tensor u = random_tensor({T, d}, 500 + i);
    const Tensor fast = selective_scan(u, p);
    const Tensor slow = reference::selective_scan_sequential(u, p);
    worst = std::max(worst, max_rel_diff(fast, slow, 1e-9));
  }
  CHECK(worst <= 1e-6);
  CHECK(selective_scan(Tensor::zeros({4, 3}), random_block(3, 2, 1)).data()[5] == 0.0);
}

TEST_CASE("causality: suffix perturbation leaves the prefix unchanged") {
  const SsmBlockParams p = random_block(4, 5, 8);
  const Tensor u = random_tensor({12, 4}, 9);
  const Tensor y = selective_scan(u, p);
  for (std::size_t cut : {0u, 5u, 11u}) {
    std::vector<Real> v(u.data().begin(), u.data().end());
    for (std::size_t i = (cut + 1) * 4; i < v.size(); ++i) v[i] += 3.0;
    const Tensor y2 = selective_scan(Tensor::from({12, 4}, v), p);
    for (std::size_t i = 0; i < (cut + 1) * 4; ++i) CHECK(y2[i] == y[i]);
  }
}

TEST_CASE("stability: bounded input gives a bounded state") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const SsmBlockParams p = SsmBlockParams::init(4, 6, rng);
    const std::size_t T = 40;
    const Tensor u = random_tensor({T, 4}, seed + 50);
    const Tensor y = selective_scan(u, p);
    for (Real v : y.data()) CHECK(std::isfinite(v));
    const auto proj = project_params(u, p);
    const auto disc = discretize(proj.delta, state_matrix(p), proj.b);
    Real max_b = 0.0;
    for (Real v : disc.b_bar.data()) max_b = std::max(max_b, std::abs(v));
    for (Real v : disc.a_bar.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    const Tensor h = reference::final_state_sequential(u, p);
    for (Real v : h.data()) CHECK(std::abs(v) <= 6.0 * max_b * static_cast<Real>(T));
  }
}

TEST_CASE("gradcheck: every parameter and the input") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SsmBlockParams p = random_block(2, 3, 40 + seed);
    const Tensor u = lfsamba::test::random_param({6, 2}, 60 + seed);
    const Tensor in[] = {u, p.a_log, p.w_b, p.w_c, p.w_dt_down, p.w_dt_up, p.dt_bias, p.d_skip};
    const auto rep = gradcheck([&] { return lfsamba::test::probe_loss(selective_scan(u, p)); }, in);
    CAPTURE(rep.max_rel_err);
    CHECK(rep.pass);

    const Tensor c = lfsamba::test::random_param({6, 3}, 70 + seed);
    const Tensor in2[] = {u, c, p.w_b};
    CHECK(gradcheck([&] { return lfsamba::test::probe_loss(selective_scan_with_output_matrix(u, c, p)); }, in2)
              .pass);
  }
}

TEST_CASE("shape errors") {
  const SsmBlockParams p = random_block(3, 2, 1);
  CHECK_THROWS_AS(selective_scan(Tensor::zeros({4, 2}), p), DimensionError);
  CHECK_THROWS_AS(discretize(Tensor::zeros({2, 3}), Tensor::zeros({2, 2}), Tensor::zeros({2, 2})), DimensionError);
}
