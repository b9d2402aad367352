#pragma once

// On-disk dataset layout:
//   <root>/manifest.jsonl              one {"id","k","has_scribble"} object per line
//   <root>/<id>/allfocus.png           RGB
//   <root>/<id>/slice_00.png ...       RGB, focus-depth order
//   <root>/<id>/gt.png                 gray, binarized at 128
//   <root>/<id>/scribble.png           gray, 0 = unlabeled, 128 = background, 255 = foreground

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lfsamba/focal_stack.hpp"

namespace lfsamba {

struct ManifestEntry {
  std::string id;
  std::size_t k = 0;
  bool has_scribble = false;
};

FocalStack load_sample(const std::filesystem::path& dir);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root);
void write_manifest(const std::filesystem::path& root, const std::vector<ManifestEntry>& entries);

/// Loads every manifest entry in manifest order.
std::vector<FocalStack> load_dataset(const std::filesystem::path& root);

struct SynthConfig {
  std::size_t image_size = 64;
  std::size_t num_slices = 3;
  Real blur_per_depth = 2.0;  // σ = blur_per_depth·|depth − focus|
  std::size_t min_shapes = 2;
  std::size_t max_shapes = 4;
};

/// Generates one sample in memory; deterministic in (seed, index).
FocalStack synth_sample(std::uint64_t seed, std::size_t index, const SynthConfig& config = {});

/// Writes n samples and the manifest under root.
std::vector<ManifestEntry> synth_dataset(std::uint64_t seed, std::size_t n, const std::filesystem::path& root,
                                         const SynthConfig& config = {});

/// Scribble mask [H,W] with values {0,1,2} from a binary gt.
Tensor synth_scribbles(const Tensor& gt, std::uint64_t seed);

/// Adds scribble.png to every sample and updates the manifest.
void scribble_dataset(const std::filesystem::path& root, std::uint64_t seed = 0);

/// Writes a sample directory (used by the generator and by tests).
void write_sample(const std::filesystem::path& dir, const FocalStack& stack);

}  // namespace lfsamba
