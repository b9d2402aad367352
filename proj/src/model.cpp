#include "lfsamba/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "lfsamba/errors.hpp"
#include "lfsamba/ops.hpp"

namespace lfsamba {

namespace {

Tensor frozen_normal(Shape shape, Real stddev, Rng& rng) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = storage_round(rng.normal(0.0, stddev));
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor frozen_full(Shape shape, Real value) { return Tensor::full(std::move(shape), storage_round(value)); }

Real inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<Real>(n)); }

std::string indexed(const std::string& prefix, const char* kind, std::size_t i) {
  return join_name(prefix, std::string(kind) + "." + std::to_string(i));
}

}  // namespace

std::size_t ModelConfig::decoder_stages() const {
  return patch > 0 ? static_cast<std::size_t>(std::countr_zero(patch)) : 0;
}

std::size_t ModelConfig::decoder_channels(std::size_t stage) const {
  std::size_t c = dim;
  for (std::size_t s = 0; s < stage; ++s) c = std::max<std::size_t>(c / 2, 4);
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (image_size == 0 || patch == 0 || dim == 0 || state_size == 0 || groups == 0 || encoder_blocks == 0 ||
      heads == 0 || mlp_ratio == 0 || adapter_ratio == 0 || num_slices == 0) {
    fail("all sizes must be positive");
  }
  if (!std::has_single_bit(patch)) fail("patch must be a power of two (decoder upsamples by 2 per stage)");
  if (image_size % patch != 0) fail("image_size must be divisible by patch");
  if (dim % heads != 0) fail("dim must be divisible by heads");
  if (dim % adapter_ratio != 0) fail("dim must be divisible by adapter_ratio");
}

FrozenEncoder FrozenEncoder::generate(const ModelConfig& config) {
  config.validate();
  Rng rng(config.encoder_seed);
  const std::size_t d = config.dim, p = config.patch, h = config.grid(), hidden = config.mlp_ratio * d;
  FrozenEncoder e;
  e.patch_w = frozen_normal({d, 3 * p * p}, inv_sqrt(3 * p * p), rng);
  e.patch_b = frozen_normal({d}, 0.1, rng);
  e.pos_embed = frozen_normal({d, 2 * h, 2 * h}, 0.5, rng);
  for (std::size_t b = 0; b < config.encoder_blocks; ++b) {
    EncoderBlock blk;
    blk.ln1_g = frozen_full({d}, 1.0);
    blk.ln1_b = frozen_full({d}, 0.0);
    blk.qkv_w = frozen_normal({3 * d, d}, inv_sqrt(d), rng);
    blk.qkv_b = frozen_full({3 * d}, 0.0);
    blk.proj_w = frozen_normal({d, d}, inv_sqrt(d), rng);
    blk.proj_b = frozen_full({d}, 0.0);
    blk.ln2_g = frozen_full({d}, 1.0);
    blk.ln2_b = frozen_full({d}, 0.0);
    blk.fc1_w = frozen_normal({hidden, d}, inv_sqrt(d), rng);
    blk.fc1_b = frozen_full({hidden}, 0.0);
    blk.fc2_w = frozen_normal({d, hidden}, inv_sqrt(hidden), rng);
    blk.fc2_b = frozen_full({d}, 0.0);
    e.blocks.push_back(std::move(blk));
  }
  return e;
}

void FrozenEncoder::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "patch_w"), patch_w);
  fn(join_name(prefix, "patch_b"), patch_b);
  fn(join_name(prefix, "pos_embed"), pos_embed);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string n = indexed(prefix, "block", i);
    auto& b = blocks[i];
    fn(join_name(n, "ln1_g"), b.ln1_g);
    fn(join_name(n, "ln1_b"), b.ln1_b);
    fn(join_name(n, "qkv_w"), b.qkv_w);
    fn(join_name(n, "qkv_b"), b.qkv_b);
    fn(join_name(n, "proj_w"), b.proj_w);
    fn(join_name(n, "proj_b"), b.proj_b);
    fn(join_name(n, "ln2_g"), b.ln2_g);
    fn(join_name(n, "ln2_b"), b.ln2_b);
    fn(join_name(n, "fc1_w"), b.fc1_w);
    fn(join_name(n, "fc1_b"), b.fc1_b);
    fn(join_name(n, "fc2_w"), b.fc2_w);
    fn(join_name(n, "fc2_b"), b.fc2_b);
  }
}

AdapterGroup AdapterGroup::init(const ModelConfig& config, Rng& rng) {
  const std::size_t d = config.dim, r = d / config.adapter_ratio;
  AdapterGroup g;
  g.pos_k = param_identity_kernel(d, 3, false);
  g.pos_b = param_zeros({d});
  for (std::size_t b = 0; b < config.encoder_blocks; ++b) {
    FeatureAdapter a;
    a.w_down = param_normal({r, d}, inv_sqrt(d), rng);
    a.b_down = param_zeros({r});
    a.w_up = param_zeros({d, r});
    a.b_up = param_zeros({d});
    g.blocks.push_back(std::move(a));
  }
  return g;
}

void AdapterGroup::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "pos_k"), pos_k);
  fn(join_name(prefix, "pos_b"), pos_b);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string n = indexed(prefix, "block", i);
    fn(join_name(n, "w_down"), blocks[i].w_down);
    fn(join_name(n, "b_down"), blocks[i].b_down);
    fn(join_name(n, "w_up"), blocks[i].w_up);
    fn(join_name(n, "b_up"), blocks[i].b_up);
  }
}

DecoderParams DecoderParams::init(const ModelConfig& config, Rng& rng) {
  DecoderParams dec;
  for (std::size_t s = 0; s < config.decoder_stages(); ++s) {
    const std::size_t cin = config.decoder_channels(s), cout = config.decoder_channels(s + 1);
    dec.stages.push_back({param_normal({cout, cin, 3, 3}, std::sqrt(2.0 / static_cast<Real>(9 * cin)), rng),
                          param_zeros({cout})});
  }
  const std::size_t c = config.decoder_channels(config.decoder_stages());
  dec.head_k = param_normal({1, c, 3, 3}, inv_sqrt(9 * c), rng);
  dec.head_b = param_zeros({1});
  return dec;
}

void DecoderParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string n = indexed(prefix, "stage", i);
    fn(join_name(n, "k"), stages[i].k);
    fn(join_name(n, "b"), stages[i].b);
  }
  fn(join_name(prefix, "head_k"), head_k);
  fn(join_name(prefix, "head_b"), head_b);
}

ConcatFusionParams ConcatFusionParams::init(const ModelConfig& config, Rng& rng) {
  const std::size_t d = config.dim, in = config.num_slices * d;
  return {param_normal({d, in}, inv_sqrt(in), rng), param_zeros({d})};
}

void ConcatFusionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "w"), w);
  fn(join_name(prefix, "b"), b);
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams m;
  m.config = config;
  m.encoder = FrozenEncoder::generate(config);
  Rng rng(seed);
  for (std::size_t g = 0; g <= config.groups; ++g) m.adapters.push_back(AdapterGroup::init(config, rng));
  if (config.fusion == FusionKind::mamba) {
    m.inter_slice = InterSliceParams::init(config.dim, config.state_size, rng);
  } else {
    m.concat = ConcatFusionParams::init(config, rng);
  }
  m.inter_modal = InterModalParams::init(config.dim, config.state_size, rng);
  m.decoder = DecoderParams::init(config, rng);
  return m;
}

void ModelParams::visit_trainable(const ParamVisitor& fn) {
  for (std::size_t g = 0; g < adapters.size(); ++g) adapters[g].visit("adapter." + std::to_string(g), fn);
  if (config.fusion == FusionKind::mamba) {
    inter_slice.visit("inter_slice", fn);
  } else {
    concat.visit("concat", fn);
  }
  inter_modal.visit("inter_modal", fn);
  decoder.visit("decoder", fn);
}

void ModelParams::visit_frozen(const ParamVisitor& fn) { encoder.visit("encoder", fn); }

void ModelParams::visit_all(const ParamVisitor& fn) {
  visit_frozen(fn);
  visit_trainable(fn);
}

std::vector<std::pair<std::string, Tensor>> trainable_params(ModelParams& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  params.visit_trainable([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::size_t count_trainable(ModelParams& params) {
  std::size_t n = 0;
  params.visit_trainable([&](const std::string&, Tensor& t) { n += t.numel(); });
  return n;
}

std::size_t analytic_trainable_count(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.dim, n = c.state_size, r = dt_rank_for(d), bott = d / c.adapter_ratio;
  const std::size_t ssm = 3 * d * n + 2 * r * d + 2 * d;
  const std::size_t directional = 4 * ssm;
  const std::size_t stem = d * d + 11 * d;
  const std::size_t norm_proj = d * d + 3 * d;
  const std::size_t linear = d * d + d;

  const std::size_t adapter_group = (9 * d * d + d) + c.encoder_blocks * (2 * bott * d + bott + d);
  const std::size_t slice_fusion = c.fusion == FusionKind::mamba
                                       ? stem + directional + 2 * d + 2 * linear
                                       : c.num_slices * d * d + d;
  const std::size_t cross_stream = stem + 2 * directional + norm_proj;
  const std::size_t inter_modal = (18 * d * d + d) + (stem + directional + norm_proj) + 2 * cross_stream;
  std::size_t decoder = 0;
  for (std::size_t s = 0; s < c.decoder_stages(); ++s) {
    const std::size_t cin = c.decoder_channels(s), cout = c.decoder_channels(s + 1);
    decoder += 9 * cin * cout + cout;
  }
  decoder += 9 * c.decoder_channels(c.decoder_stages()) + 1;
  return (c.groups + 1) * adapter_group + slice_fusion + inter_modal + decoder;
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("patchify: expected [3,H,W], got " + shape_str(image.shape()));
  const std::size_t H = image.dim(1), W = image.dim(2);
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw DimensionError("patchify: image " + std::to_string(H) + "x" + std::to_string(W) +
                         " is not divisible by patch " + std::to_string(patch));
  }
  const std::size_t h = H / patch, w = W / patch, F = 3 * patch * patch;
  std::vector<std::size_t> idx(h * w * F);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            idx[(i * w + j) * F + (c * patch + y) * patch + x] = (c * H + i * patch + y) * W + j * patch + x;
  return gather(image, idx, {h * w, F});
}

Tensor position_adapter(const Tensor& pos, const Tensor& kernel, const Tensor& bias) {
  if (pos.rank() != 3 || pos.dim(1) % 2 != 0 || pos.dim(2) % 2 != 0) {
    throw DimensionError("position_adapter: base grid must have even dims, got " + shape_str(pos.shape()));
  }
  return conv2d(pool2d(pos, PoolKind::max, 2, 2), kernel, bias, 1);
}

Tensor feature_adapter(const Tensor& x, const FeatureAdapter& a) {
  return linear(relu(linear(x, a.w_down, a.b_down)), a.w_up, a.b_up);
}

namespace {

Tensor encode_impl(const Tensor& image, const AdapterGroup* group, const FrozenEncoder& enc, const ModelConfig& cfg) {
  const std::size_t h = cfg.grid();
  if (image.rank() != 3 || image.dim(1) != cfg.image_size || image.dim(2) != cfg.image_size) {
    throw DimensionError("encode: image " + shape_str(image.shape()) + " does not match configured size " +
                         std::to_string(cfg.image_size));
  }
  const Tensor tokens = linear(patchify(image, cfg.patch), enc.patch_w, enc.patch_b);
  const Tensor pos = group ? position_adapter(enc.pos_embed, group->pos_k, group->pos_b)
                           : pool2d(enc.pos_embed, PoolKind::max, 2, 2);
  Tensor x = add(tokens, to_tokens(pos));
  for (std::size_t b = 0; b < enc.blocks.size(); ++b) {
    const auto& blk = enc.blocks[b];
    const Tensor qkv = linear(layer_norm(x, blk.ln1_g, blk.ln1_b), blk.qkv_w, blk.qkv_b);
    x = add(x, linear(attention(qkv, cfg.heads), blk.proj_w, blk.proj_b));
    const Tensor m = layer_norm(x, blk.ln2_g, blk.ln2_b);
    const Tensor mlp = linear(activation(linear(m, blk.fc1_w, blk.fc1_b), Activation::gelu), blk.fc2_w, blk.fc2_b);
    x = add(x, mlp);
    if (group) x = add(x, feature_adapter(m, group->blocks[b]));
  }
  return to_grid(x, h, h);
}

}  // namespace

Tensor encode(const Tensor& image, const AdapterGroup& group, const FrozenEncoder& encoder, const ModelConfig& config) {
  return encode_impl(image, &group, encoder, config);
}

Tensor encode_reference(const Tensor& image, const FrozenEncoder& encoder, const ModelConfig& config) {
  return encode_impl(image, nullptr, encoder, config);
}

Tensor decode(const Tensor& fused, const DecoderParams& dec, std::size_t out_height, std::size_t out_width) {
  if (fused.rank() != 3) throw DimensionError("decode: expected [d,h,w], got " + shape_str(fused.shape()));
  const std::size_t scale = std::size_t{1} << dec.stages.size();
  if (fused.dim(1) * scale != out_height || fused.dim(2) * scale != out_width) {
    throw DimensionError("decode: " + std::to_string(fused.dim(1)) + "x" + std::to_string(fused.dim(2)) +
                         " features cannot reach " + std::to_string(out_height) + "x" + std::to_string(out_width) +
                         " with " + std::to_string(dec.stages.size()) + " doubling stages");
  }
  Tensor x = fused;
  for (const auto& s : dec.stages) x = relu(upsample_bilinear2x(conv2d(x, s.k, s.b, 1)));
  return reshape(sigmoid(conv2d(x, dec.head_k, dec.head_b, 1)), {out_height, out_width});
}

Tensor concat_fuse(const std::vector<Tensor>& features, const ConcatFusionParams& params) {
  if (features.empty()) throw ContractError("concat_fuse: empty slice list");
  const std::size_t expect = params.w.dim(1) / params.w.dim(0);
  if (features.size() != expect) {
    throw DimensionError("concat_fuse: configured for " + std::to_string(expect) + " slices, got " +
                         std::to_string(features.size()));
  }
  return channel_linear(combine(features, CombineMode::concat_channel), params.w, params.b);
}

std::size_t slice_group(std::size_t k, std::size_t groups) { return std::min(k + 1, groups); }

ForwardOutputs forward_detailed(const FocalStack& stack, const ModelParams& params) {
  const auto& cfg = params.config;
  if (stack.slices.empty()) throw ContractError("forward: focal stack has no slices");
  ForwardOutputs out;
  out.f0 = encode(stack.all_focus, params.adapters[0], params.encoder, cfg);
  std::vector<Tensor> features;
  features.reserve(stack.slices.size());
  for (std::size_t k = 0; k < stack.slices.size(); ++k) {
    features.push_back(encode(stack.slices[k], params.adapters[slice_group(k, cfg.groups)], params.encoder, cfg));
  }
  out.f_slices = cfg.fusion == FusionKind::mamba ? inter_slice_fuse(features, params.inter_slice)
                                                 : concat_fuse(features, params.concat);
  out.f_fused = inter_modal_fuse(out.f0, out.f_slices, params.inter_modal);
  out.saliency = decode(out.f_fused, params.decoder, stack.height(), stack.width());
  return out;
}

}  // namespace lfsamba
