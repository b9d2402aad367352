#include "lfsamba/inter_modal.hpp"

#include "lfsamba/errors.hpp"
#include "lfsamba/ops.hpp"

namespace lfsamba {

namespace {

void require_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 3 || a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": streams must share a [d,h,w] shape, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
}

}  // namespace

CrossStreamParams CrossStreamParams::init(std::size_t channels, std::size_t states, Rng& rng) {
  CrossStreamParams p;
  p.stem = ConvStem::init(channels, rng);
  p.stage1 = DirectionalScanParams::init(channels, states, rng);
  p.stage2 = DirectionalScanParams::init(channels, states, rng);
  p.head = NormProjection::zero_init(channels);
  return p;
}

void CrossStreamParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  stem.visit(join_name(prefix, "stem"), fn);
  stage1.visit(join_name(prefix, "stage1"), fn);
  stage2.visit(join_name(prefix, "stage2"), fn);
  head.visit(join_name(prefix, "head"), fn);
}

InterModalParams InterModalParams::init(std::size_t channels, std::size_t states, Rng& rng) {
  InterModalParams p;
  p.fuse_k = param_zeros({channels, 2 * channels, 3, 3});
  p.fuse_b = param_zeros({channels});
  p.mid_stem = ConvStem::init(channels, rng);
  p.mid_scan = DirectionalScanParams::init(channels, states, rng);
  p.mid_head = NormProjection::zero_init(channels);
  p.all_focus = CrossStreamParams::init(channels, states, rng);
  p.slices = CrossStreamParams::init(channels, states, rng);
  return p;
}

void InterModalParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "fuse_k"), fuse_k);
  fn(join_name(prefix, "fuse_b"), fuse_b);
  mid_stem.visit(join_name(prefix, "mid.stem"), fn);
  mid_scan.visit(join_name(prefix, "mid.ss2d"), fn);
  mid_head.visit(join_name(prefix, "mid.head"), fn);
  all_focus.visit(join_name(prefix, "all_focus"), fn);
  slices.visit(join_name(prefix, "slices"), fn);
}

Tensor fuse_basic(const Tensor& f0, const Tensor& f_slices, const InterModalParams& params) {
  require_pair(f0, f_slices, "fuse_basic");
  return conv2d(combine({f0, f_slices}, CombineMode::concat_channel), params.fuse_k, params.fuse_b, 1);
}

Tensor middle_stream(const Tensor& p, const InterModalParams& params) {
  return params.mid_head.apply(ss2d(params.mid_stem.apply(p), params.mid_scan));
}

Tensor exchanged_ss2d(const Tensor& x, const Tensor& other, const DirectionalScanParams& own,
                      const DirectionalScanParams& other_params, bool exchange) {
  require_pair(x, other, "exchanged_ss2d");
  const std::size_t rows = x.dim(1), cols = x.dim(2);
  std::vector<Tensor> parts;
  parts.reserve(kScanDirections.size());
  for (std::size_t i = 0; i < kScanDirections.size(); ++i) {
    const ScanDirection dir = kScanDirections[i];
    const Tensor u = unfold(x, dir);
    Tensor y;
    if (exchange) {
      const Tensor c = linear(unfold(other, dir), other_params.blocks[i].w_c, Tensor());
      y = selective_scan_with_output_matrix(u, c, own.blocks[i]);
    } else {
      y = selective_scan(u, own.blocks[i]);
    }
    parts.push_back(fold(y, dir, rows, cols));
  }
  return combine(parts, CombineMode::add);
}

CrossScanOutputs cross_ss2d(const Tensor& x0, const Tensor& x_slices, const InterModalParams& params,
                            bool exchange_c) {
  require_pair(x0, x_slices, "cross_ss2d");
  const auto& a = params.all_focus;
  const auto& s = params.slices;
  const Tensor y0 = exchanged_ss2d(x0, x_slices, a.stage1, s.stage1, exchange_c);
  const Tensor y_slices = exchanged_ss2d(x_slices, x0, s.stage1, a.stage1, exchange_c);
  return {ss2d(y_slices, a.stage2), ss2d(y0, s.stage2)};
}

InterModalOutputs inter_modal_parts(const Tensor& f0, const Tensor& f_slices, const InterModalParams& params) {
  require_pair(f0, f_slices, "inter_modal_fuse");
  InterModalOutputs out;
  out.basic = fuse_basic(f0, f_slices, params);
  out.middle = middle_stream(out.basic, params);
  const Tensor x0 = params.all_focus.stem.apply(f0);
  const Tensor xs = params.slices.stem.apply(f_slices);
  const CrossScanOutputs cross = cross_ss2d(x0, xs, params);
  out.all_focus = params.all_focus.head.apply(cross.s2a);
  out.slices = params.slices.head.apply(cross.a2s);
  out.fused = combine({out.all_focus, f0, out.middle, out.basic, out.slices, f_slices}, CombineMode::add);
  return out;
}

}  // namespace lfsamba
