#include "lfsamba/run.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "lfsamba/checkpoint.hpp"
#include "lfsamba/dataset.hpp"
#include "lfsamba/errors.hpp"
#include "lfsamba/image_io.hpp"

namespace lfsamba {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

// Reads the keys of one JSON object section, rejecting anything unexpected.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: " + name_ + "." + key + " has the wrong type");
    }
  }

  void positive(const char* key, std::size_t& out) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_integer() || it->get<long long>() <= 0) {
      throw ConfigError("config: " + name_ + "." + key + " must be a positive integer");
    }
    out = it->get<std::size_t>();
  }

  void positive_real(const char* key, Real& out) {
    read(key, out);
    if (!(out > 0.0) || !std::isfinite(out)) throw ConfigError("config: " + name_ + "." + key + " must be positive");
  }

  const json* sub(const char* key) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw ConfigError("config: unknown key '" + (name_.empty() ? key : name_ + "." + key) + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::vector<std::string> seen_;
};

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");

  if (const json* m = top.sub("model")) {
    Section s(*m, "model");
    s.positive("image_size", c.model.image_size);
    s.positive("patch", c.model.patch);
    s.positive("dim", c.model.dim);
    s.positive("state_size", c.model.state_size);
    s.positive("groups", c.model.groups);
    s.positive("encoder_blocks", c.model.encoder_blocks);
    s.positive("heads", c.model.heads);
    s.positive("mlp_ratio", c.model.mlp_ratio);
    s.positive("adapter_ratio", c.model.adapter_ratio);
    s.positive("num_slices", c.model.num_slices);
    s.read("encoder_seed", c.model.encoder_seed);
    std::string fusion = "mamba";
    s.read("fusion", fusion);
    if (fusion == "mamba") {
      c.model.fusion = FusionKind::mamba;
    } else if (fusion == "concat") {
      c.model.fusion = FusionKind::concat;
    } else {
      throw ConfigError("config: model.fusion must be 'mamba' or 'concat'");
    }
    std::size_t stages = 0;
    s.positive("decoder_stages", stages);
    s.finish();
    c.model.validate();
    if (stages != 0 && stages != c.model.decoder_stages()) {
      throw ConfigError("config: model.decoder_stages must equal log2(patch) = " +
                        std::to_string(c.model.decoder_stages()));
    }
  }
  if (const json* o = top.sub("optim")) {
    Section s(*o, "optim");
    s.positive_real("lr", c.adam.lr);
    s.positive_real("beta1", c.adam.beta1);
    s.positive_real("beta2", c.adam.beta2);
    s.positive_real("eps", c.adam.eps);
    if (c.adam.beta1 >= 1.0 || c.adam.beta2 >= 1.0) throw ConfigError("config: optim betas must be below 1");
    s.read("steps", c.steps);
    s.read("seed", c.seed);
    s.read("checkpoint_every", c.checkpoint_every);
    s.finish();
  }
  if (const json* m = top.sub("mode")) {
    if (*m == "full") {
      c.mode = Supervision::full;
    } else if (*m == "weak") {
      c.mode = Supervision::weak;
    } else {
      throw ConfigError("config: mode must be 'full' or 'weak'");
    }
  }
  if (const json* l = top.sub("loss")) {
    Section s(*l, "loss");
    s.positive("pool_window", c.loss.pool_window);
    if (c.loss.pool_window % 2 == 0) throw ConfigError("config: loss.pool_window must be odd");
    s.positive_real("edge_gain", c.loss.edge_gain);
    s.positive_real("clamp", c.loss.clamp);
    s.positive_real("lsc_radius", c.loss.lsc_radius);
    s.positive_real("lsc_sigma_xy", c.loss.lsc_sigma_xy);
    s.positive_real("lsc_sigma_rgb", c.loss.lsc_sigma_rgb);
    s.positive_real("smooth_alpha", c.loss.smooth_alpha);
    s.positive_real("lambda_lsc", c.loss.lambda_lsc);
    s.positive_real("lambda_smooth", c.loss.lambda_smooth);
    s.finish();
  }
  if (const json* p = top.sub("paths")) {
    Section s(*p, "paths");
    std::string dataset, out;
    s.read("dataset", dataset);
    s.read("out", out);
    s.finish();
    c.dataset = dataset;
    c.out = out;
  }
  top.finish();
  c.model.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("config not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"image_size", c.model.image_size},
                {"patch", c.model.patch},
                {"dim", c.model.dim},
                {"state_size", c.model.state_size},
                {"groups", c.model.groups},
                {"encoder_blocks", c.model.encoder_blocks},
                {"heads", c.model.heads},
                {"mlp_ratio", c.model.mlp_ratio},
                {"adapter_ratio", c.model.adapter_ratio},
                {"num_slices", c.model.num_slices},
                {"encoder_seed", c.model.encoder_seed},
                {"fusion", c.model.fusion == FusionKind::concat ? "concat" : "mamba"},
                {"decoder_stages", c.model.decoder_stages()}};
  j["optim"] = {{"lr", c.adam.lr},       {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2},
                {"eps", c.adam.eps},     {"steps", c.steps},      {"seed", c.seed},
                {"checkpoint_every", c.checkpoint_every}};
  j["mode"] = c.mode == Supervision::weak ? "weak" : "full";
  j["loss"] = {{"pool_window", c.loss.pool_window},   {"edge_gain", c.loss.edge_gain},
               {"clamp", c.loss.clamp},               {"lsc_radius", c.loss.lsc_radius},
               {"lsc_sigma_xy", c.loss.lsc_sigma_xy}, {"lsc_sigma_rgb", c.loss.lsc_sigma_rgb},
               {"smooth_alpha", c.loss.smooth_alpha}, {"lambda_lsc", c.loss.lambda_lsc},
               {"lambda_smooth", c.loss.lambda_smooth}};
  j["paths"] = {{"dataset", c.dataset.string()}, {"out", c.out.string()}};
  return j.dump(2);
}

void check_precision_env() {
  const char* p = std::getenv("LFSAMBA_PRECISION");
  if (p == nullptr || std::string(p).empty() || std::string(p) == "f64") return;
  if (std::string(p) == "f32") throw ConfigError("LFSAMBA_PRECISION=f32 is not supported by this build (64-bit only)");
  throw ConfigError("LFSAMBA_PRECISION must be f32 or f64, got '" + std::string(p) + "'");
}

// ---------------------------------------------------------------------------
// Training

namespace {

void require_annotations(const std::vector<FocalStack>& data, Supervision mode) {
  for (const auto& s : data) {
    if (mode == Supervision::full && !s.gt.defined()) {
      throw ContractError("full supervision needs gt.png for sample " + s.id);
    }
    if (mode == Supervision::weak && !s.scribble.defined()) {
      throw ContractError("weak supervision needs scribble.png for sample " + s.id);
    }
  }
}

fs::path checkpoint_path(const fs::path& out, std::size_t step) {
  char name[48];
  std::snprintf(name, sizeof name, "checkpoint_%06zu.lfsb", step);
  return out / name;
}

}  // namespace

TrainResult train_loop(const RunConfig& config, std::ostream* log, const TrainObserver& observer) {
  check_precision_env();
  config.model.validate();
  const auto data = load_dataset(config.dataset);
  if (data.empty() && config.steps > 0) throw ContractError("training dataset is empty: " + config.dataset.string());
  require_annotations(data, config.mode);
  for (const auto& s : data) {
    if (s.height() != config.model.image_size || s.width() != config.model.image_size) {
      throw DimensionError("sample " + s.id + " is " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                           ", model expects " + std::to_string(config.model.image_size));
    }
  }

  TrainResult result{{}, config.out / "checkpoint.lfsb", ModelParams::init(config.model, config.seed)};
  ModelParams& params = result.params;
  std::vector<Tensor> trainable;
  for (auto& [_, t] : trainable_params(params)) trainable.push_back(t);
  Adam adam(trainable, config.adam);

  std::error_code ec;
  fs::create_directories(config.out, ec);
  if (ec) throw IoError("cannot create output directory " + config.out.string() + ": " + ec.message());
  std::ofstream file_log(config.out / "train.log");
  if (!file_log) throw IoError("cannot write " + (config.out / "train.log").string());

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const FocalStack& sample = data[step % data.size()];
    Tape tape;
    Real loss_value = 0.0;
    {
      TapeScope scope(tape);
      const Tensor loss = total_loss(forward(sample, params), sample, config.mode, config.loss);
      loss_value = loss[0];
      if (!std::isfinite(loss_value)) throw EvaluationError("non-finite loss at step " + std::to_string(step));
      adam.step(backward(loss, tape));
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.losses.push_back(loss_value);
    std::ostringstream line;
    line << "step=" << step << " loss=" << std::setprecision(17) << loss_value << " wall_ms=" << std::fixed
         << std::setprecision(3) << ms;
    file_log << line.str() << '\n';
    if (log != nullptr) *log << line.str() << '\n';
    if (observer.after_step) observer.after_step(step, loss_value, params);
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      save_checkpoint(params, checkpoint_path(config.out, step + 1), step + 1, config.seed);
    }
  }
  save_checkpoint(params, result.checkpoint, config.steps, config.seed);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation and inference

EvalReport evaluate_run(const RunConfig& config, const fs::path& checkpoint, const fs::path& dataset,
                        const fs::path& out) {
  check_precision_env();
  ModelParams params = ModelParams::init(config.model, config.seed);
  load_into(params, read_checkpoint(checkpoint));

  const fs::path pred_dir = out / "pred";
  std::error_code ec;
  fs::create_directories(pred_dir, ec);
  if (ec) throw IoError("cannot create " + pred_dir.string() + ": " + ec.message());
  for (const auto& entry : read_manifest(dataset)) {
    const FocalStack s = load_sample(dataset / entry.id);
    write_png(pred_dir / (entry.id + ".png"), to_image8(forward(s, params)));
  }
  EvalReport report = evaluate_dataset(pred_dir, dataset);
  write_report(report, out);
  return report;
}

Tensor feature_rendering(const Tensor& f) {
  if (f.rank() != 3) throw DimensionError("feature_rendering: expected [C,H,W], got " + shape_str(f.shape()));
  const std::size_t C = f.dim(0), plane = f.dim(1) * f.dim(2);
  std::vector<Real> mean(plane, 0.0);
  const auto v = f.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) mean[i] += v[c * plane + i];
  Real lo = INFINITY, hi = -INFINITY;
  for (auto& m : mean) {
    m /= static_cast<Real>(C);
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  for (auto& m : mean) m = hi > lo ? (m - lo) / (hi - lo) : 0.0;
  return Tensor::from({f.dim(1), f.dim(2)}, std::move(mean));
}

fs::path infer_run(const fs::path& checkpoint, const fs::path& sample_dir, const fs::path& out, bool dump_features) {
  check_precision_env();
  const ModelParams params = load_checkpoint(checkpoint);
  const FocalStack s = load_sample(sample_dir);
  const ForwardOutputs o = forward_detailed(s, params);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  const fs::path pred = out / (s.id + ".png");
  write_png(pred, to_image8(o.saliency));
  if (dump_features) {
    write_png(out / "f0.png", to_image8(feature_rendering(o.f0)));
    write_png(out / "fslices.png", to_image8(feature_rendering(o.f_slices)));
    write_png(out / "ffused.png", to_image8(feature_rendering(o.f_fused)));
  }
  return pred;
}

// ---------------------------------------------------------------------------
// Cost report

std::vector<BenchRow> bench_run(const RunConfig& config, const BenchOptions& options) {
  check_precision_env();
  if (options.runs == 0) throw ContractError("bench: runs must be positive");
  SynthConfig synth;
  synth.image_size = config.model.image_size;
  synth.num_slices = config.model.num_slices;
  const FocalStack sample = synth_sample(config.seed, 0, synth);

  std::vector<BenchRow> rows;
  for (FusionKind kind : {FusionKind::mamba, FusionKind::concat}) {
    ModelConfig mc = config.model;
    mc.fusion = kind;
    ModelParams params = ModelParams::init(mc, config.seed);
    BenchRow row;
    row.variant = kind == FusionKind::mamba ? "mamba" : "concat";
    row.trainable = count_trainable(params);
    row.analytic = analytic_trainable_count(mc);
    for (std::size_t i = 0; i < options.warmup; ++i) (void)forward(sample, params);
    std::vector<double> times;
    for (std::size_t i = 0; i < options.runs; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)forward(sample, params);
      times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    double sum = 0.0;
    for (double t : times) sum += t;
    row.mean_ms = sum / static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - row.mean_ms) * (t - row.mean_ms);
    row.sd_ms = times.size() > 1 ? std::sqrt(var / static_cast<double>(times.size() - 1)) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

void print_bench(const std::vector<BenchRow>& rows, std::ostream& os) {
  os << std::left << std::setw(10) << "variant" << std::right << std::setw(12) << "trainable" << std::setw(12)
     << "analytic" << std::setw(22) << "forward ms (mean±sd)" << '\n';
  for (const auto& r : rows) {
    std::ostringstream t;
    t << std::fixed << std::setprecision(2) << r.mean_ms << " ± " << r.sd_ms;
    os << std::left << std::setw(10) << r.variant << std::right << std::setw(12) << r.trainable << std::setw(12)
       << r.analytic << std::setw(22) << t.str() << '\n';
  }
}

void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << "variant,trainable_params,analytic_params,forward_ms_mean,forward_ms_sd\n";
  const auto old = out.precision(6);
  for (const auto& r : rows) {
    out << r.variant << ',' << r.trainable << ',' << r.analytic << ',' << r.mean_ms << ',' << r.sd_ms << '\n';
  }
  out.precision(old);
}

void write_bench_csv(const std::vector<BenchRow>& rows, const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_bench_csv(rows, out);
  if (!out.flush()) throw IoError("failed writing " + path.string());
}

}  // namespace lfsamba
