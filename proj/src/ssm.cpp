#include "lfsamba/ssm.hpp"

#include <cmath>

#include "lfsamba/errors.hpp"
#include "lfsamba/kernels.hpp"
#include "lfsamba/ops.hpp"

namespace lfsamba {

SsmBlockParams SsmBlockParams::init(std::size_t channels, std::size_t states, Rng& rng) {
  const std::size_t r = dt_rank_for(channels);
  SsmBlockParams p;
  std::vector<Real> a_log(channels * states);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t n = 0; n < states; ++n) a_log[c * states + n] = storage_round(std::log(static_cast<Real>(n + 1)));
  }
  p.a_log = Tensor::parameter({channels, states}, std::move(a_log));
  const Real in_std = 1.0 / std::sqrt(static_cast<Real>(channels));
  p.w_b = param_normal({states, channels}, in_std, rng);
  p.w_c = param_normal({states, channels}, in_std, rng);
  p.w_dt_down = param_normal({r, channels}, in_std, rng);
  const Real up = 1.0 / std::sqrt(static_cast<Real>(r));
  p.w_dt_up = param_uniform({channels, r}, -up, up, rng);
  std::vector<Real> bias(channels);
  for (auto& b : bias) {
    const Real dt = rng.uniform(1e-3, 1e-1);
    b = storage_round(dt + std::log(-std::expm1(-dt)));  // softplus⁻¹(dt)
  }
  p.dt_bias = Tensor::parameter({channels}, std::move(bias));
  p.d_skip = param_full({channels}, 1.0);
  return p;
}

void SsmBlockParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "a_log"), a_log);
  fn(join_name(prefix, "w_b"), w_b);
  fn(join_name(prefix, "w_c"), w_c);
  fn(join_name(prefix, "w_dt_down"), w_dt_down);
  fn(join_name(prefix, "w_dt_up"), w_dt_up);
  fn(join_name(prefix, "dt_bias"), dt_bias);
  fn(join_name(prefix, "d_skip"), d_skip);
}

namespace {

void check_sequence(const Tensor& u, const SsmBlockParams& p, const char* op) {
  if (u.rank() != 2 || u.dim(1) != p.channels()) {
    throw DimensionError(std::string(op) + ": expected [T," + std::to_string(p.channels()) + "] sequence, got " +
                         shape_str(u.shape()));
  }
  if (u.dim(0) == 0) throw ContractError(std::string(op) + ": empty sequence");
}

}  // namespace

ProjectedParams project_params(const Tensor& u, const SsmBlockParams& p) {
  check_sequence(u, p, "project_params");
  ProjectedParams out;
  out.b = linear(u, p.w_b, Tensor());
  out.c = linear(u, p.w_c, Tensor());
  out.delta = softplus(linear(linear(u, p.w_dt_down, Tensor()), p.w_dt_up, p.dt_bias));
  return out;
}

Tensor state_matrix(const SsmBlockParams& p) { return scale(activation(p.a_log, Activation::exp), -1.0); }

Discretized discretize(const Tensor& delta, const Tensor& a, const Tensor& b) {
  if (delta.rank() != 2 || a.rank() != 2 || b.rank() != 2 || delta.dim(1) != a.dim(0) ||
      b.dim(0) != delta.dim(0) || b.dim(1) != a.dim(1)) {
    throw DimensionError("discretize: incompatible shapes delta " + shape_str(delta.shape()) + ", A " +
                         shape_str(a.shape()) + ", B " + shape_str(b.shape()));
  }
  const std::size_t T = delta.dim(0), d = a.dim(0), N = a.dim(1);
  std::vector<Real> a_bar(T * d * N), b_bar(T * d * N);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      const Real dt = delta[t * d + c];
      for (std::size_t n = 0; n < N; ++n) {
        a_bar[(t * d + c) * N + n] = std::exp(dt * a[c * N + n]);
        b_bar[(t * d + c) * N + n] = dt * b[t * N + n];
      }
    }
  }
  return {Tensor::from({T, d, N}, std::move(a_bar)), Tensor::from({T, d, N}, std::move(b_bar))};
}

Tensor scan_core(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                 const Tensor& d_skip) {
  if (u.rank() != 2 || a.rank() != 2) throw DimensionError("scan_core: u and A must be rank 2");
  kernels::ScanGeometry g{u.dim(0), u.dim(1), a.dim(1)};
  const bool ok = delta.shape() == u.shape() && a.dim(0) == g.channels && b.shape() == Shape{g.steps, g.states} &&
                  c.shape() == Shape{g.steps, g.states} && d_skip.shape() == Shape{g.channels};
  if (!ok) {
    throw DimensionError("scan_core: inconsistent operands u " + shape_str(u.shape()) + ", delta " +
                         shape_str(delta.shape()) + ", A " + shape_str(a.shape()) + ", B " + shape_str(b.shape()) +
                         ", C " + shape_str(c.shape()) + ", D " + shape_str(d_skip.shape()));
  }
  const kernels::ScanOperands ops{u.data(), delta.data(), a.data(), b.data(), c.data(), d_skip.data()};
  std::vector<Real> y(g.steps * g.channels);
  std::vector<Real> states;
  if (will_record({u, delta, a, b, c, d_skip})) states.resize(g.channels * g.steps * g.states);
  kernels::parallel::scan_forward(g, ops, y, states);
  return record_op({g.steps, g.channels}, std::move(y), {u, delta, a, b, c, d_skip},
                   [u, delta, a, b, c, d_skip, g, states = std::move(states)](std::span<const Real> gy,
                                                                              std::span<std::vector<Real>*> grads) {
                     auto span_of = [](std::vector<Real>* v) { return v ? std::span<Real>(*v) : std::span<Real>{}; };
                     const kernels::ScanOperands ops{u.data(), delta.data(), a.data(),
                                                     b.data(), c.data(),     d_skip.data()};
                     const kernels::ScanGradients out{span_of(grads[0]), span_of(grads[1]), span_of(grads[2]),
                                                      span_of(grads[3]), span_of(grads[4]), span_of(grads[5])};
                     kernels::parallel::scan_backward(g, ops, states, gy, out);
                   });
}

Tensor selective_scan(const Tensor& u, const SsmBlockParams& p) {
  const ProjectedParams proj = project_params(u, p);
  return scan_core(u, proj.delta, state_matrix(p), proj.b, proj.c, p.d_skip);
}

Tensor selective_scan_with_output_matrix(const Tensor& u, const Tensor& c, const SsmBlockParams& p) {
  check_sequence(u, p, "selective_scan_with_output_matrix");
  Tensor b = linear(u, p.w_b, Tensor());
  Tensor delta = softplus(linear(linear(u, p.w_dt_down, Tensor()), p.w_dt_up, p.dt_bias));
  return scan_core(u, delta, state_matrix(p), b, c, p.d_skip);
}

namespace reference {

namespace {

struct RawProjection {
  std::vector<Real> delta, b, c, a;
};

RawProjection raw_project(const Tensor& u, const SsmBlockParams& p) {
  const std::size_t T = u.dim(0), d = p.channels(), N = p.states(), r = p.dt_rank();
  RawProjection out{std::vector<Real>(T * d), std::vector<Real>(T * N), std::vector<Real>(T * N),
                    std::vector<Real>(d * N)};
  for (std::size_t i = 0; i < d * N; ++i) out.a[i] = -std::exp(p.a_log[i]);
  std::vector<Real> low(r);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t n = 0; n < N; ++n) {
      Real sb = 0.0, sc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        sb += p.w_b[n * d + k] * u[t * d + k];
        sc += p.w_c[n * d + k] * u[t * d + k];
      }
      out.b[t * N + n] = sb;
      out.c[t * N + n] = sc;
    }
    for (std::size_t j = 0; j < r; ++j) {
      Real s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += p.w_dt_down[j * d + k] * u[t * d + k];
      low[j] = s;
    }
    for (std::size_t c = 0; c < d; ++c) {
      Real s = p.dt_bias[c];
      for (std::size_t j = 0; j < r; ++j) s += p.w_dt_up[c * r + j] * low[j];
      out.delta[t * d + c] = s > 30.0 ? s : std::log1p(std::exp(s));
    }
  }
  return out;
}

// Runs the recurrence; returns y [T,d] and leaves the last state in `h` ([d,N]).
std::vector<Real> run(const Tensor& u, const RawProjection& pr, const std::vector<Real>& c_mat,
                      const SsmBlockParams& p, std::vector<Real>& h) {
  const std::size_t T = u.dim(0), d = p.channels(), N = p.states();
  std::vector<Real> y(T * d, 0.0);
  h.assign(d * N, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      const Real dt = pr.delta[t * d + c];
      Real out = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const Real a_bar = std::exp(dt * pr.a[c * N + n]);
        const Real b_bar = dt * pr.b[t * N + n];
        h[c * N + n] = a_bar * h[c * N + n] + b_bar * u[t * d + c];
        out += c_mat[t * N + n] * h[c * N + n];
      }
      y[t * d + c] = out + p.d_skip[c] * u[t * d + c];
    }
  }
  return y;
}

}  // namespace

Tensor selective_scan_sequential(const Tensor& u, const SsmBlockParams& p) {
  check_sequence(u, p, "selective_scan_sequential");
  const RawProjection pr = raw_project(u, p);
  std::vector<Real> h;
  return Tensor::from({u.dim(0), p.channels()}, run(u, pr, pr.c, p, h));
}

Tensor selective_scan_sequential(const Tensor& u, const Tensor& c, const SsmBlockParams& p) {
  check_sequence(u, p, "selective_scan_sequential");
  if (c.shape() != Shape{u.dim(0), p.states()}) throw DimensionError("selective_scan_sequential: C shape mismatch");
  const RawProjection pr = raw_project(u, p);
  std::vector<Real> h;
  return Tensor::from({u.dim(0), p.channels()},
                      run(u, pr, std::vector<Real>(c.data().begin(), c.data().end()), p, h));
}

Tensor final_state_sequential(const Tensor& u, const SsmBlockParams& p) {
  check_sequence(u, p, "final_state_sequential");
  const RawProjection pr = raw_project(u, p);
  std::vector<Real> h;
  run(u, pr, pr.c, p, h);
  return Tensor::from({p.channels(), p.states()}, std::move(h));
}

}  // namespace reference

}  // namespace lfsamba
