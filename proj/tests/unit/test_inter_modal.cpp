#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lfsamba/errors.hpp"
#include "lfsamba/inter_modal.hpp"
#include "test_support.hpp"

using namespace lfsamba;
using namespace lfsamba::test;

namespace {

InterModalParams random_params(std::size_t d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  auto p = InterModalParams::init(d, n, rng);
  randomize_all(p, seed);
  return p;
}

void fill(Tensor& t, Real v) {
  auto s = t.mutable_data();
  std::fill(s.begin(), s.end(), v);
}

// Exchanged four-direction scan built from the sequential reference.
Tensor oracle_exchanged(const Tensor& x, const Tensor& other, const DirectionalScanParams& own,
                        const DirectionalScanParams& theirs) {
  const std::size_t d = x.dim(0), R = x.dim(1), S = x.dim(2), L = R * S;
  std::vector<Real> out(d * L, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto order = scan_order(R, S, kScanDirections[i]);
    std::vector<Real> u(L * d), o(L * d);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < d; ++c) {
        u[t * d + c] = x[c * L + order[t]];
        o[t * d + c] = other[c * L + order[t]];
      }
    const std::size_t N = theirs.blocks[i].states();
    std::vector<Real> cm(L * N, 0.0);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < d; ++c) cm[t * N + n] += theirs.blocks[i].w_c[n * d + c] * o[t * d + c];
    const Tensor y = reference::selective_scan_sequential(Tensor::from({L, d}, u), Tensor::from({L, N}, cm),
                                                          own.blocks[i]);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < d; ++c) out[c * L + order[t]] += y[t * d + c];
  }
  return Tensor::from(x.shape(), out);
}

Tensor oracle_ss2d(const Tensor& x, const DirectionalScanParams& p) {
  const std::size_t d = x.dim(0), R = x.dim(1), S = x.dim(2), L = R * S;
  std::vector<Real> out(d * L, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto order = scan_order(R, S, kScanDirections[i]);
    std::vector<Real> u(L * d);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < d; ++c) u[t * d + c] = x[c * L + order[t]];
    const Tensor y = reference::selective_scan_sequential(Tensor::from({L, d}, u), p.blocks[i]);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t c = 0; c < d; ++c) out[c * L + order[t]] += y[t * d + c];
  }
  return Tensor::from(x.shape(), out);
}

}  // namespace

TEST_CASE("fuse_basic: zeros, constant bias, direct convolution oracle") {
  InterModalParams p = random_params(3, 2, 1);
  fill(p.fuse_b, 0.0);
  const Tensor z = fuse_basic(Tensor::zeros({3, 2, 2}), Tensor::zeros({3, 2, 2}), p);
  for (Real v : z.data()) CHECK(v == 0.0);

  InterModalParams q = p;
  q.fuse_k = Tensor::zeros({3, 6, 3, 3});
  q.fuse_b = Tensor::full({3}, 0.25);
  const Tensor c = fuse_basic(random_tensor({3, 2, 2}, 2), random_tensor({3, 2, 2}, 3), q);
  for (Real v : c.data()) CHECK(v == 0.25);

  InterModalParams r = random_params(3, 2, 4);
  const Tensor a = random_tensor({3, 3, 4}, 5), b = random_tensor({3, 3, 4}, 6);
  const Tensor y = fuse_basic(a, b, r);
  for (std::size_t o = 0; o < 3; ++o)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) {
        Real s = r.fuse_b[o];
        for (std::size_t ci = 0; ci < 6; ++ci)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const int ii = i + di, jj = j + dj;
              if (ii < 0 || ii >= 3 || jj < 0 || jj >= 4) continue;
              const Real xv = ci < 3 ? a[(ci * 3 + ii) * 4 + jj] : b[((ci - 3) * 3 + ii) * 4 + jj];
              s += r.fuse_k[((o * 6 + ci) * 3 + (di + 1)) * 3 + (dj + 1)] * xv;
            }
        CHECK(y[(o * 3 + i) * 4 + j] == doctest::Approx(s).epsilon(1e-12));
      }
  CHECK_THROWS_AS(fuse_basic(a, Tensor::zeros({3, 3, 3}), r), DimensionError);
}

TEST_CASE("middle_stream: zero cascade, shape, gradcheck") {
  InterModalParams p = random_params(4, 2, 7);
  for (Tensor* t : {&p.mid_stem.in_b, &p.mid_stem.dw_b, &p.mid_head.beta, &p.mid_head.out_b}) fill(*t, 0.0);
  const Tensor z = middle_stream(Tensor::zeros({4, 2, 3}), p);
  CHECK(z.shape() == Shape{4, 2, 3});
  for (Real v : z.data()) CHECK(v == 0.0);

  const Tensor x = random_param({4, 2, 2}, 8);
  std::vector<Tensor> in = collect(p.mid_stem);
  in.push_back(x);
  in.push_back(p.mid_head.out_w);
  in.push_back(p.mid_scan.blocks[2].w_b);
  const auto rep = gradcheck([&] { return probe_loss(middle_stream(x, p)); }, in);
  CAPTURE(rep.max_rel_err);
  CHECK(rep.pass);
}

TEST_CASE("cross_ss2d: symmetry, zeros, exchange ablation") {
  InterModalParams p = random_params(3, 2, 9);
  p.slices = p.all_focus;
  const Tensor x = random_tensor({3, 2, 3}, 10);
  const auto sym = cross_ss2d(x, x, p);
  CHECK(bitwise_equal(sym.s2a, sym.a2s));

  const auto z = cross_ss2d(Tensor::zeros({3, 2, 2}), Tensor::zeros({3, 2, 2}), p);
  for (Real v : z.s2a.data()) CHECK(v == 0.0);
  for (Real v : z.a2s.data()) CHECK(v == 0.0);

  const InterModalParams q = random_params(3, 2, 11);
  const Tensor x0 = random_tensor({3, 2, 3}, 12), xs = random_tensor({3, 2, 3}, 13);
  const auto on = cross_ss2d(x0, xs, q, true);
  const auto off = cross_ss2d(x0, xs, q, false);
  CHECK(max_abs_diff(on.s2a, off.s2a) > 1e-6);
  CHECK(max_abs_diff(on.a2s, off.a2s) > 1e-6);
  CHECK_THROWS_AS(cross_ss2d(x0, Tensor::zeros({3, 3, 2}), q), DimensionError);
}

TEST_CASE("cross_ss2d: matches the two-stage oracle") {
  const InterModalParams p = random_params(3, 2, 14);
  const Tensor x0 = random_tensor({3, 2, 3}, 15), xs = random_tensor({3, 2, 3}, 16);
  const Tensor y0 = oracle_exchanged(x0, xs, p.all_focus.stage1, p.slices.stage1);
  const Tensor ys = oracle_exchanged(xs, x0, p.slices.stage1, p.all_focus.stage1);
  const auto got = cross_ss2d(x0, xs, p);
  CHECK(max_abs_diff(got.s2a, oracle_ss2d(ys, p.all_focus.stage2)) <= 1e-10);
  CHECK(max_abs_diff(got.a2s, oracle_ss2d(y0, p.slices.stage2)) <= 1e-10);
}

TEST_CASE("cross_ss2d: all-focus output depends on the slice stream") {
  const InterModalParams p = random_params(3, 2, 17);
  const Tensor x0 = random_tensor({3, 2, 2}, 18);
  const auto a = cross_ss2d(x0, random_tensor({3, 2, 2}, 19), p);
  const auto b = cross_ss2d(x0, Tensor::zeros({3, 2, 2}), p);
  CHECK(max_abs_diff(a.s2a, b.s2a) > 1e-6);
}

TEST_CASE("inter_modal_fuse: init law and zero inputs") {
  Rng rng(20);
  const InterModalParams p = InterModalParams::init(4, 2, rng);
  const Tensor f0 = random_tensor({4, 2, 2}, 21), fs = random_tensor({4, 2, 2}, 22);
  CHECK(bitwise_equal(inter_modal_fuse(f0, fs, p), add(f0, fs)));

  InterModalParams q = random_params(4, 2, 23);
  for (Tensor* t : {&q.fuse_b, &q.mid_stem.in_b, &q.mid_stem.dw_b, &q.mid_head.beta, &q.mid_head.out_b,
                    &q.all_focus.stem.in_b, &q.all_focus.stem.dw_b, &q.all_focus.head.beta, &q.all_focus.head.out_b,
                    &q.slices.stem.in_b, &q.slices.stem.dw_b, &q.slices.head.beta, &q.slices.head.out_b})
    fill(*t, 0.0);
  const Tensor z = inter_modal_fuse(Tensor::zeros({4, 2, 2}), Tensor::zeros({4, 2, 2}), q);
  CHECK(z.shape() == Shape{4, 2, 2});
  for (Real v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("inter_modal_fuse: composition oracle") {
  const InterModalParams p = random_params(3, 2, 24);
  const Tensor f0 = random_tensor({3, 2, 3}, 25), fs = random_tensor({3, 2, 3}, 26);
  const Tensor basic = conv2d(combine({f0, fs}, CombineMode::concat_channel), p.fuse_k, p.fuse_b, 1);
  const Tensor mid = p.mid_head.apply(oracle_ss2d(p.mid_stem.apply(basic), p.mid_scan));
  const Tensor x0 = p.all_focus.stem.apply(f0), xs = p.slices.stem.apply(fs);
  const Tensor y0 = oracle_exchanged(x0, xs, p.all_focus.stage1, p.slices.stage1);
  const Tensor ys = oracle_exchanged(xs, x0, p.slices.stage1, p.all_focus.stage1);
  const Tensor bar0 = p.all_focus.head.apply(oracle_ss2d(ys, p.all_focus.stage2));
  const Tensor bars = p.slices.head.apply(oracle_ss2d(y0, p.slices.stage2));
  std::vector<Real> expect(f0.numel());
  for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = bar0[i] + f0[i] + mid[i] + basic[i] + bars[i] + fs[i];
  CHECK(max_abs_diff(inter_modal_fuse(f0, fs, p), Tensor::from(f0.shape(), expect)) <= 1e-10);
}

TEST_CASE("inter_modal_fuse: swap symmetry with tied streams") {
  InterModalParams p = random_params(3, 2, 27);
  p.slices = p.all_focus;
  // make the fuse conv symmetric in its two input halves
  auto k = p.fuse_k.mutable_data();
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 9; ++t) k[(o * 6 + c + 3) * 9 + t] = k[(o * 6 + c) * 9 + t];
  const Tensor a = random_tensor({3, 2, 2}, 28), b = random_tensor({3, 2, 2}, 29);
  const auto ab = inter_modal_parts(a, b, p);
  const auto ba = inter_modal_parts(b, a, p);
  CHECK(max_abs_diff(ab.all_focus, ba.slices) <= 1e-14);
  CHECK(max_abs_diff(ab.slices, ba.all_focus) <= 1e-14);
  CHECK(max_abs_diff(ab.fused, ba.fused) <= 1e-12);
}

TEST_CASE("inter_modal_fuse: full-block gradcheck") {
  InterModalParams p = random_params(2, 2, 30);
  std::vector<Tensor> in = collect(p);
  const Tensor f0 = random_param({2, 2, 2}, 31), fs = random_param({2, 2, 2}, 32);
  in.push_back(f0);
  in.push_back(fs);
  GradcheckOptions opts;
  opts.sample_fraction = 0.2;
  const auto rep = gradcheck([&] { return probe_loss(inter_modal_fuse(f0, fs, p)); }, in, opts);
  CAPTURE(rep.max_rel_err);
  CHECK(rep.pass);
}
