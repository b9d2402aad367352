#pragma once

// Binary checkpoint container, little-endian throughout:
//   "LFSB" | u32 version | u64 step | u64 seed | u32 count
//   count × { u32 name_len | name | u32 rank | u32 dims[rank] | f32 values[] }
// The model geometry travels with the weights as the tensor "meta.geometry".

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lfsamba/model.hpp"

namespace lfsamba {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> order;  // write order
  std::map<std::string, StoredTensor> tensors;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Snapshot of every tensor (frozen and trainable) plus the geometry record.
Checkpoint make_checkpoint(ModelParams& params, std::uint64_t step, std::uint64_t seed);

void save_checkpoint(ModelParams& params, const std::filesystem::path& path, std::uint64_t step = 0,
                     std::uint64_t seed = 0);

/// Rebuilds the model from the stored geometry and weights.
ModelParams load_checkpoint(const std::filesystem::path& path);

/// Copies stored weights into existing parameters. A missing name raises
/// FormatError, a shape disagreement raises DimensionError; both name the tensor.
void load_into(ModelParams& params, const Checkpoint& ckpt);

ModelConfig geometry_of(const Checkpoint& ckpt);

}  // namespace lfsamba
