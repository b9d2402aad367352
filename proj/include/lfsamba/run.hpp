#pragma once

// End-to-end commands shared by the CLI and the acceptance tests.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "lfsamba/losses.hpp"
#include "lfsamba/metrics.hpp"
#include "lfsamba/model.hpp"
#include "lfsamba/optim.hpp"

namespace lfsamba {

struct RunConfig {
  ModelConfig model;
  AdamConfig adam;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  Supervision mode = Supervision::full;
  LossConstants loss;
  std::filesystem::path dataset;
  std::filesystem::path out;
};

/// Parses a JSON document; unknown keys, wrong types and non-positive sizes raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

/// Rejects LFSAMBA_PRECISION values other than f64 (or unset).
void check_precision_env();

struct TrainObserver {
  /// Called after each optimizer step with the loss computed before the update.
  std::function<void(std::size_t step, Real loss, const ModelParams& params)> after_step;
};

struct TrainResult {
  std::vector<Real> losses;
  std::filesystem::path checkpoint;
  ModelParams params;
};

/// Adam over the trainable tensors, one sample per step in manifest order.
/// Writes <out>/train.log, <out>/checkpoint.lfsb and, with an interval,
/// <out>/checkpoint_<step>.lfsb.
TrainResult train_loop(const RunConfig& config, std::ostream* log = nullptr, const TrainObserver& observer = {});

/// Predictions to <out>/pred/<id>.png, then metrics.csv and pr_curve.csv in <out>.
EvalReport evaluate_run(const RunConfig& config, const std::filesystem::path& checkpoint,
                        const std::filesystem::path& dataset, const std::filesystem::path& out);

/// Writes <out>/<id>.png; with dump_features also f0.png, fslices.png, ffused.png.
std::filesystem::path infer_run(const std::filesystem::path& checkpoint, const std::filesystem::path& sample_dir,
                                const std::filesystem::path& out, bool dump_features);

/// Channel-mean of a [C,H,W] feature map, min-max scaled to [0,1].
Tensor feature_rendering(const Tensor& feature);

struct BenchRow {
  std::string variant;
  std::size_t trainable = 0;
  std::size_t analytic = 0;
  Real mean_ms = 0.0;
  Real sd_ms = 0.0;
};

struct BenchOptions {
  std::size_t warmup = 3;
  std::size_t runs = 20;
};

std::vector<BenchRow> bench_run(const RunConfig& config, const BenchOptions& options = {});
void print_bench(const std::vector<BenchRow>& rows, std::ostream& os);
void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& os);
void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path);

}  // namespace lfsamba
