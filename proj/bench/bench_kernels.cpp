// Times the serial and OpenMP kernels on shapes taken from the default model.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "lfsamba/kernels.hpp"

namespace k = lfsamba::kernels;
using lfsamba::Real;

namespace {

std::vector<Real> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<Real> dist(-0.5, 0.5);
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

double time_ms(const std::function<void()>& fn, int runs) {
  fn();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < runs; ++i) fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / runs;
}

void report(const char* name, const std::function<void()>& serial, const std::function<void()>& parallel,
            int runs) {
  const double s = time_ms(serial, runs), p = time_ms(parallel, runs);
  std::printf("%-28s %10.3f %10.3f %8.2fx\n", name, s, p, s / p);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", k::thread_count());
  std::printf("%-28s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

  const std::size_t rows = 64, in = 64, out = 256;
  const auto x = noise(rows * in, 1), w = noise(out * in, 2), b = noise(out, 3), gy = noise(rows * out, 4);
  std::vector<Real> y(rows * out), dx(rows * in), dw(out * in);
  report("linear forward 64x64->256", [&] { k::serial::linear_forward(x, w, b, rows, in, out, y); },
         [&] { k::parallel::linear_forward(x, w, b, rows, in, out, y); }, 200);
  report("linear backward weight", [&] { k::serial::linear_backward_weight(gy, x, rows, in, out, dw); },
         [&] { k::parallel::linear_backward_weight(gy, x, rows, in, out, dw); }, 200);

  k::ConvGeometry g{.in_channels = 16, .out_channels = 8, .height = 64, .width = 64, .kernel = 3, .padding = 1};
  const auto cx = noise(16 * 64 * 64, 5), ck = noise(8 * 16 * 9, 6), cb = noise(8, 7), cgy = noise(8 * 64 * 64, 8);
  std::vector<Real> cy(8 * 64 * 64), cdx(16 * 64 * 64);
  report("conv3x3 16->8 @64x64", [&] { k::serial::conv2d_forward(g, cx, ck, cb, cy); },
         [&] { k::parallel::conv2d_forward(g, cx, ck, cb, cy); }, 20);
  report("conv3x3 backward input", [&] { k::serial::conv2d_backward_input(g, cgy, ck, cdx); },
         [&] { k::parallel::conv2d_backward_input(g, cgy, ck, cdx); }, 20);

  const k::ScanGeometry sg{.steps = 192, .channels = 64, .states = 8};
  const auto u = noise(192 * 64, 9), sb = noise(192 * 8, 11), sc = noise(192 * 8, 12), skip = noise(64, 13);
  auto delta = noise(192 * 64, 10);
  for (auto& d : delta) d = 0.05 + std::abs(d) * 0.1;
  auto a = noise(64 * 8, 14);
  for (auto& v : a) v = -1.0 - std::abs(v);
  const k::ScanOperands ops{u, delta, a, sb, sc, skip};
  std::vector<Real> sy(192 * 64), states(64 * 192 * 8), sgy = noise(192 * 64, 15);
  report("scan forward T192 d64 N8", [&] { k::serial::scan_forward(sg, ops, sy, states); },
         [&] { k::parallel::scan_forward(sg, ops, sy, states); }, 50);
  std::vector<Real> gu(u.size()), gd(u.size()), ga(a.size()), gb(sb.size()), gc(sc.size()), gs(64);
  const k::ScanGradients grads{gu, gd, ga, gb, gc, gs};
  report("scan backward", [&] { k::serial::scan_backward(sg, ops, states, sgy, grads); },
         [&] { k::parallel::scan_backward(sg, ops, states, sgy, grads); }, 50);
  return 0;
}
