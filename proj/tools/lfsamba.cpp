// Command-line front end: synth, scribble, train, eval, infer, bench.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lfsamba/dataset.hpp"
#include "lfsamba/errors.hpp"
#include "lfsamba/run.hpp"

namespace fs = std::filesystem;
using namespace lfsamba;

namespace {

void print_report(const EvalReport& r) {
  std::cout << "samples " << r.rows.size() << "  mean_mae " << r.mean_mae << "  mean_f_beta " << r.mean_f_beta
            << " (" << r.f_beta_count << " with foreground)\n";
  for (const auto& id : r.missing) std::cerr << "warning: unmatched id " << id << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Light-field salient object detection with selective state space fusion"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::size_t n = 0, image_size = 64, slices = 3;
  fs::path out, dataset, config_path, ckpt, sample;
  bool dump = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic focal-stack dataset");
  synth->add_option("--seed", seed, "Generator seed")->required();
  synth->add_option("--n", n, "Number of samples")->required();
  synth->add_option("--out", out, "Dataset root")->required();
  synth->add_option("--size", image_size, "Image side length")->capture_default_str();
  synth->add_option("--slices", slices, "Focal slices per sample")->capture_default_str();

  auto* scribble = app.add_subcommand("scribble", "Add synthetic scribbles to every sample");
  scribble->add_option("--dataset", dataset, "Dataset root")->required();
  scribble->add_option("--seed", seed, "Stroke seed");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Run configuration (JSON)")->required();
  train->add_option("--out", out, "Output directory (overrides paths.out)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--config", config_path, "Run configuration (JSON)")->required();
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--dataset", dataset, "Dataset root")->required();
  eval->add_option("--out", out, "Report directory")->required();

  auto* infer = app.add_subcommand("infer", "Predict a saliency map for one sample");
  infer->add_option("--ckpt", ckpt, "Checkpoint")->required();
  infer->add_option("--sample", sample, "Sample directory")->required();
  infer->add_option("--out", out, "Output directory")->required();
  infer->add_flag("--dump-features", dump, "Also write f0.png, fslices.png, ffused.png");

  auto* bench = app.add_subcommand("bench", "Compare fusion variants by parameters and forward time");
  bench->add_option("--config", config_path, "Run configuration (JSON)");
  bench->add_option("--out", out, "Directory for bench.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    check_precision_env();
    if (synth->parsed()) {
      SynthConfig sc;
      sc.image_size = image_size;
      sc.num_slices = slices;
      const auto entries = synth_dataset(seed, n, out, sc);
      std::cout << "wrote " << entries.size() << " samples to " << out.string() << '\n';
    } else if (scribble->parsed()) {
      scribble_dataset(dataset, seed);
      std::cout << "scribbles written under " << dataset.string() << '\n';
    } else if (train->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (!out.empty()) cfg.out = out;
      if (cfg.dataset.empty()) throw ConfigError("config: paths.dataset is required for training");
      if (cfg.out.empty()) throw ConfigError("config: paths.out or --out is required for training");
      const auto result = train_loop(cfg, &std::cout);
      std::cout << "checkpoint " << result.checkpoint.string() << '\n';
    } else if (eval->parsed()) {
      const RunConfig cfg = load_run_config(config_path);
      print_report(evaluate_run(cfg, ckpt, dataset, out));
    } else if (infer->parsed()) {
      std::cout << infer_run(ckpt, sample, out, dump).string() << '\n';
    } else if (bench->parsed()) {
      const RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
      const auto rows = bench_run(cfg);
      print_bench(rows, std::cout);
      const fs::path dir = !out.empty() ? out : cfg.out;
      if (!dir.empty()) write_bench_csv(rows, dir / "bench.csv");
      std::cout << '\n';
      write_bench_csv(rows, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
