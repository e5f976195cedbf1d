/*
 * Copyright (c) 2026 The mmfer Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// mmfer: synthetic data, training, evaluation, gradient checks and the window
// ablation from one binary.
//
// Exit codes: 0 success, 1 internal error, 2 config error, 3 data error,
// 4 numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmfer/dataset.hpp"
#include "mmfer/diagnostics.hpp"
#include "mmfer/errors.hpp"
#include "mmfer/model.hpp"
#include "mmfer/objectives.hpp"
#include "mmfer/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmfer;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return kExitConfig;
    case ErrorCategory::kData: return kExitData;
    case ErrorCategory::kNumeric: return kExitNumeric;
    default: return kExitInternal;
  }
}

// Data section of a run config. Either a dataset directory (train, eval), a
// root holding w<window>/ datasets (ablate), or synthetic generator settings.
struct DataConfig {
  std::string dir;
  std::string root;
  SyntheticOptions synthetic;
};

json to_json(const DataConfig& d) {
  json j = {{"per_class", d.synthetic.per_class},
            {"eval_per_class", d.synthetic.eval_per_class},
            {"separation", d.synthetic.separation},
            {"audio_frames", d.synthetic.audio_frames},
            {"fps", d.synthetic.fps},
            {"audio_rate", d.synthetic.audio_rate}};
  if (!d.dir.empty()) j["dir"] = d.dir;
  if (!d.root.empty()) j["root"] = d.root;
  return j;
}

DataConfig data_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("\"data\" must be an object");
  DataConfig d;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "dir") d.dir = value.get<std::string>();
      else if (key == "root") d.root = value.get<std::string>();
      else if (key == "per_class") d.synthetic.per_class = value.get<int>();
      else if (key == "eval_per_class") d.synthetic.eval_per_class = value.get<int>();
      else if (key == "separation") d.synthetic.separation = value.get<double>();
      else if (key == "audio_frames") d.synthetic.audio_frames = value.get<int>();
      else if (key == "fps") d.synthetic.fps = value.get<double>();
      else if (key == "audio_rate") d.synthetic.audio_rate = value.get<double>();
      else throw ConfigError("unknown key \"data." + key + "\"");
    } catch (const json::exception& e) {
      throw ConfigError("bad value for \"data." + key + "\": " + e.what());
    }
  }
  return d;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"data", to_json(c.data)}};
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "model") c.model = model_config_from_json(value);
    else if (key == "train") c.train = train_config_from_json(value);
    else if (key == "data") c.data = data_config_from_json(value);
    else throw ConfigError("unknown key \"" + key + "\" in " + path);
  }
  return c;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

// Flag overrides shared by train and ablate. Unset flags leave file values.
struct TrainOverrides {
  std::optional<double> lr, lambda, tau, weight_decay, lr_min;
  std::optional<int> epochs, batch_size, accumulation_steps, eval_workers;
  std::optional<uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", lr, "Peak learning rate");
    cmd->add_option("--lr-min", lr_min, "Final learning rate of the cosine schedule");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--batch-size", batch_size, "Effective batch size");
    cmd->add_option("--accumulation-steps", accumulation_steps, "Micro-batches per optimizer step");
    cmd->add_option("--lambda", lambda, "Contrastive loss weight");
    cmd->add_option("--tau", tau, "Contrastive temperature");
    cmd->add_option("--weight-decay", weight_decay, "AdamW decoupled weight decay");
    cmd->add_option("--eval-workers", eval_workers, "Threads used for validation inference");
    cmd->add_option("--seed", seed, "Seed for initialization, shuffling, dropout and synthetic data");
  }
  void apply(TrainConfig& t) const {
    if (lr) t.lr = *lr;
    if (lr_min) t.lr_min = *lr_min;
    if (epochs) t.epochs = *epochs;
    if (batch_size) t.batch_size = *batch_size;
    if (accumulation_steps) t.accumulation_steps = *accumulation_steps;
    if (lambda) t.lambda = *lambda;
    if (tau) t.tau = *tau;
    if (weight_decay) t.weight_decay = *weight_decay;
    if (eval_workers) t.eval_workers = *eval_workers;
    if (seed) t.seed = *seed;
  }
};

struct SynthArgs {
  std::string out;
  SyntheticOptions options;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  const fs::path out(a.out);
  if (non_empty_dir(out) && !a.force) {
    throw ConfigError("output directory " + out.string() + " is not empty (use --force to overwrite)");
  }
  if (a.options.per_class < 1) throw ConfigError("--per-class must be >= 1");
  const DatasetSplits data = generate_synthetic(a.options);
  if (a.force && fs::exists(out)) {
    // Only what a previous synth run wrote.
    for (const char* name : {"features", "train.json", "val.json", "test.json", kTextBankFile, "config.json"}) {
      fs::remove_all(out / name);
    }
  }
  write_dataset(data, out);
  const auto& s = a.options;
  write_json({{"per_class", s.per_class},
              {"eval_per_class", s.eval_per_class},
              {"window", s.window},
              {"separation", s.separation},
              {"audio_frames", s.audio_frames},
              {"fps", s.fps},
              {"audio_rate", s.audio_rate},
              {"seed", s.seed}},
             out / "config.json");
  std::cout << "wrote " << data.train.size() << " train, " << data.val.size() << " val, " << data.test.size()
            << " test samples to " << out.string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string data, config, out;
  TrainOverrides overrides;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  a.overrides.apply(cfg.train);
  if (!a.data.empty()) cfg.data.dir = a.data;
  if (cfg.data.dir.empty()) throw ConfigError("no dataset: pass --data or set \"data.dir\"");
  cfg.model.validate();
  cfg.train.validate();

  const fs::path out(a.out);
  fs::create_directories(out);
  write_json(to_json(cfg), out / "config.json");

  const DatasetSplits data = load_dataset(cfg.data.dir);
  const TextBank bank = make_text_bank(data.text_bank);
  TrainOptions opts;
  opts.out_dir = out;
  opts.on_epoch = [](const EpochRecord& e) {
    std::printf("epoch %3d  lr %.3e  train_f1 %.4f  val_f1 %.4f  %.1fs\n", e.epoch, e.lr, e.train.macro_f1,
                e.val.macro_f1, e.seconds);
    std::fflush(stdout);
  };
  const TrainResult r = train(data.train, data.val, bank, cfg.model, cfg.train, opts);
  std::printf("best val macro F1 %.4f at epoch %d\n", r.log.best_val_macro_f1, r.log.best_epoch);
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, split = "val", out;
  int workers = 1;
};

int cmd_eval(const EvalArgs& a) {
  const Split split = parse_split(a.split);
  const auto [state, meta] = load_checkpoint(a.ckpt);
  const DatasetManifest manifest = load_manifest(fs::path(a.data) / (std::string(split_name(split)) + ".json"));
  const std::vector<WindowSample> samples = load_samples(manifest);
  if (samples.empty()) throw DataError("split " + a.split + " has no samples");
  const MetricsReport report = evaluate(state, samples, a.workers);

  json j = to_json(report);
  j["split"] = split_name(split);
  j["samples"] = samples.size();
  j["checkpoint"] = a.ckpt;
  std::cout << format_metrics_table(report);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_json(j, fs::path(a.out) / "metrics.json");
  } else {
    std::cout << j.dump(2) << '\n';
  }
  return 0;
}

struct GradcheckArgs {
  uint64_t seed = 42;
  double tolerance = 1e-4;
  std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto rows = run_layer_grad_checks(a.seed);
  std::cout << format_grad_check_table(rows, a.tolerance);
  bool ok = true;
  json j = json::array();
  for (const auto& r : rows) {
    ok = ok && r.result.max_rel_error <= a.tolerance;
    j.push_back({{"layer", r.layer},
                 {"max_rel_error", r.result.max_rel_error},
                 {"coordinates", r.result.coordinates_checked},
                 {"seconds", r.seconds}});
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_json(j, fs::path(a.out) / "gradcheck.json");
  }
  if (!ok) {
    std::cerr << "gradient check failed: relative error above " << a.tolerance << '\n';
    return kExitNumeric;
  }
  return 0;
}

struct AblateArgs {
  std::string config, out, data_root;
  std::vector<int> windows{10, 15, 30, 60};
  std::optional<int> per_class;
  std::optional<double> separation;
  TrainOverrides overrides;
};

int cmd_ablate(const AblateArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  a.overrides.apply(cfg.train);
  if (!a.data_root.empty()) cfg.data.root = a.data_root;
  if (a.per_class) cfg.data.synthetic.per_class = *a.per_class;
  if (a.separation) cfg.data.synthetic.separation = *a.separation;
  cfg.data.synthetic.seed = cfg.train.seed;
  cfg.model.validate();
  cfg.train.validate();
  for (int w : a.windows) {
    if (!is_supported_window(w)) throw ConfigError("window " + std::to_string(w) + " is not one of 10, 15, 30, 60");
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  json effective = to_json(cfg);
  effective["windows"] = a.windows;
  write_json(effective, out / "config.json");

  DatasetProvider provider = [&](int window) {
    if (!cfg.data.root.empty()) return load_dataset(fs::path(cfg.data.root) / ("w" + std::to_string(window)));
    SyntheticOptions s = cfg.data.synthetic;
    s.window = window;
    return generate_synthetic(s);
  };
  const auto rows = ablate_windows(a.windows, provider, cfg.model, cfg.train, out);
  const std::string table = format_window_table(rows);
  std::cout << table;
  std::ofstream(out / "ablation.txt") << table;
  write_json(to_json(rows), out / "ablation.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal facial expression recognition: training and evaluation tools"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a seeded synthetic dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--per-class", synth.options.per_class, "Training samples per class")->capture_default_str();
  c_synth->add_option("--eval-per-class", synth.options.eval_per_class,
                      "Validation and test samples per class (0: half of --per-class)");
  c_synth->add_option("--window", synth.options.window, "Frames per sample")
      ->check(CLI::IsMember({10, 15, 30, 60}))
      ->capture_default_str();
  c_synth->add_option("--separation", synth.options.separation, "Distance scale between class means")
      ->capture_default_str();
  c_synth->add_option("--audio-frames", synth.options.audio_frames, "Audio rows per sample (0: from window)");
  c_synth->add_option("--seed", synth.options.seed, "Generator seed")->capture_default_str();
  c_synth->add_flag("--force", synth.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model and keep the best validation checkpoint");
  c_train->add_option("--data", tr.data, "Dataset directory (overrides data.dir)");
  c_train->add_option("--config", tr.config, "JSON config with model, train and data sections");
  c_train->add_option("--out", tr.out, "Output directory")->required();
  tr.overrides.attach(c_train);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  c_eval->add_option("--data", ev.data, "Dataset directory")->required();
  c_eval->add_option("--split", ev.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  c_eval->add_option("--out", ev.out, "Write metrics.json here instead of printing it");
  c_eval->add_option("--workers", ev.workers, "Inference threads")->capture_default_str();

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every layer in double precision");
  c_grad->add_option("--seed", gc.seed, "Seed for parameters and inputs")->capture_default_str();
  c_grad->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
  c_grad->add_option("--out", gc.out, "Write gradcheck.json here");

  AblateArgs ab;
  auto* c_ablate = app.add_subcommand("ablate", "Train one model per window size and tabulate validation macro F1");
  c_ablate->add_option("--windows", ab.windows, "Comma-separated window sizes")->delimiter(',')->capture_default_str();
  c_ablate->add_option("--config", ab.config, "JSON config with model, train and data sections");
  c_ablate->add_option("--out", ab.out, "Output directory")->required();
  c_ablate->add_option("--data-root", ab.data_root, "Directory holding w<window>/ datasets (default: synthetic)");
  c_ablate->add_option("--per-class", ab.per_class, "Synthetic training samples per class");
  c_ablate->add_option("--separation", ab.separation, "Synthetic class separation");
  ab.overrides.attach(c_ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*c_synth) return cmd_synth(synth);
    if (*c_train) return cmd_train(tr);
    if (*c_eval) return cmd_eval(ev);
    if (*c_grad) return cmd_gradcheck(gc);
    if (*c_ablate) return cmd_ablate(ab);
  } catch (const Error& e) {
    std::cerr << "mmfer: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "mmfer: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "mmfer: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}
