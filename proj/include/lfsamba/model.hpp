#pragma once

// Full saliency model: a frozen toy transformer encoder shared by all
// inputs, one adapter group per input role, inter-slice and inter-modal
// fusion, and a conv-upsample decoder.

#include <cstdint>
#include <string>
#include <vector>

#include "lfsamba/focal_stack.hpp"
#include "lfsamba/inter_modal.hpp"
#include "lfsamba/inter_slice.hpp"

namespace lfsamba {

enum class FusionKind { mamba, concat };

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t patch = 8;
  std::size_t dim = 64;
  std::size_t state_size = 8;
  std::size_t groups = 4;  // slice groups; group 0 is the all-focus image
  std::size_t encoder_blocks = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t adapter_ratio = 4;
  std::size_t num_slices = 3;  // used only by the concat baseline
  std::uint64_t encoder_seed = 1234;
  FusionKind fusion = FusionKind::mamba;

  std::size_t grid() const { return image_size / patch; }
  std::size_t decoder_stages() const;
  /// Channel count after decoder stage s (s = 0 is the encoder width).
  std::size_t decoder_channels(std::size_t stage) const;
  /// Throws ConfigError when the geometry is inconsistent.
  void validate() const;
};

struct EncoderBlock {
  Tensor ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  Tensor ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

/// Fixed weights generated from a seed; never part of the trainable set.
struct FrozenEncoder {
  Tensor patch_w;    // [d, 3p²]
  Tensor patch_b;    // [d]
  Tensor pos_embed;  // [d, 2h, 2w]
  std::vector<EncoderBlock> blocks;

  static FrozenEncoder generate(const ModelConfig& config);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct FeatureAdapter {
  Tensor w_down, b_down;  // [d/ρ, d], [d/ρ]
  Tensor w_up, b_up;      // [d, d/ρ], [d]; zero at init
};

struct AdapterGroup {
  Tensor pos_k, pos_b;  // [d, d, 3, 3], [d]; identity at init
  std::vector<FeatureAdapter> blocks;

  static AdapterGroup init(const ModelConfig& config, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct DecoderStage {
  Tensor k, b;
};

struct DecoderParams {
  std::vector<DecoderStage> stages;  // conv3x3 → bilinear ×2 → ReLU
  Tensor head_k, head_b;             // [1, c, 3, 3], [1]

  static DecoderParams init(const ModelConfig& config, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Concatenation baseline for slice fusion: 1×1 conv over K·d channels.
struct ConcatFusionParams {
  Tensor w, b;  // [d, K·d], [d]

  static ConcatFusionParams init(const ModelConfig& config, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct ModelParams {
  ModelConfig config;
  FrozenEncoder encoder;
  std::vector<AdapterGroup> adapters;  // groups + 1
  InterSliceParams inter_slice;        // mamba fusion only
  ConcatFusionParams concat;           // concat fusion only
  InterModalParams inter_modal;
  DecoderParams decoder;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  void visit_trainable(const ParamVisitor& fn);
  void visit_frozen(const ParamVisitor& fn);
  /// Frozen tensors first, then trainable ones, in a stable order.
  void visit_all(const ParamVisitor& fn);
};

/// Trainable tensors with their hierarchical names.
std::vector<std::pair<std::string, Tensor>> trainable_params(ModelParams& params);
std::size_t count_trainable(ModelParams& params);

/// Closed-form trainable parameter count for a configuration.
std::size_t analytic_trainable_count(const ModelConfig& config);

/// [3,H,W] image → [T, 3p²] patch rows in row-major token order.
Tensor patchify(const Tensor& image, std::size_t patch);

/// 2×2 max pool then 3×3 conv (padding 1).
Tensor position_adapter(const Tensor& pos, const Tensor& kernel, const Tensor& bias);

/// W_up·ReLU(W_down·x + b_down) + b_up over the last axis.
Tensor feature_adapter(const Tensor& x, const FeatureAdapter& adapter);

/// Encoder output [d,h,w] with the given adapter group.
Tensor encode(const Tensor& image, const AdapterGroup& group, const FrozenEncoder& encoder,
              const ModelConfig& config);

/// Frozen encoder without adapters: max-pooled position embedding, plain blocks.
Tensor encode_reference(const Tensor& image, const FrozenEncoder& encoder, const ModelConfig& config);

/// Saliency map [H,W] in (0,1).
Tensor decode(const Tensor& fused, const DecoderParams& decoder, std::size_t out_height, std::size_t out_width);

Tensor concat_fuse(const std::vector<Tensor>& features, const ConcatFusionParams& params);

struct ForwardOutputs {
  Tensor f0;
  Tensor f_slices;
  Tensor f_fused;
  Tensor saliency;  // [H,W]
};

ForwardOutputs forward_detailed(const FocalStack& stack, const ModelParams& params);
inline Tensor forward(const FocalStack& stack, const ModelParams& params) {
  return forward_detailed(stack, params).saliency;
}

/// Adapter group used for slice k (0-based): min(k + 1, G).
std::size_t slice_group(std::size_t k, std::size_t groups);

}  // namespace lfsamba
