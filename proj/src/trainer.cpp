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

#include "mmfer/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <thread>

#include "mmfer/errors.hpp"
#include "mmfer/ops.hpp"
#include "mmfer/rng.hpp"

namespace mmfer {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {
constexpr uint64_t kDropoutStream = 0xD80F'0007ULL;
constexpr uint64_t kShuffleStream = 0x5AFF'1E5ULL;
constexpr int64_t kEvalChunk = 64;
}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (!(lr > 0)) fail("lr must be positive");
  if (!(lr_min >= 0) || lr_min > lr) fail("lr_min must be in [0, lr]");
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (accumulation_steps < 1) fail("accumulation_steps must be at least 1");
  if (batch_size % accumulation_steps != 0) {
    fail("batch_size " + std::to_string(batch_size) + " is not divisible by accumulation_steps " +
         std::to_string(accumulation_steps));
  }
  if (!(lambda >= 0)) fail("lambda must be non-negative");
  if (!(tau > 0)) fail("tau must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must be in [0, 1)");
  if (!(eps > 0)) fail("eps must be positive");
  if (eval_workers < 1) fail("eval_workers must be at least 1");
}

json to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"accumulation_steps", c.accumulation_steps},
              {"seed", c.seed},
              {"lambda", c.lambda},
              {"tau", c.tau},
              {"weight_decay", c.weight_decay},
              {"betas", {c.beta1, c.beta2}},
              {"eps", c.eps},
              {"lr_min", c.lr_min},
              {"eval_workers", c.eval_workers}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "lr") c.lr = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "accumulation_steps") c.accumulation_steps = value.get<int>();
      else if (key == "seed") c.seed = value.get<uint64_t>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "tau") c.tau = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "betas") {
        const auto b = value.get<std::vector<double>>();
        if (b.size() != 2) throw ConfigError("train config key 'betas' needs two values");
        c.beta1 = b[0];
        c.beta2 = b[1];
      } else if (key == "eps") c.eps = value.get<double>();
      else if (key == "lr_min") c.lr_min = value.get<double>();
      else if (key == "eval_workers") c.eval_workers = value.get<int>();
      else throw ConfigError("unknown train config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("train config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw ParameterError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  }
  if (cfg.epochs == 1) return cfg.lr;
  const double progress = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(const std::vector<std::pair<std::string, Tensor<float>>>& params, AdamWState& state, double lr,
                const TrainConfig& cfg) {
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) throw ContractError("adamw_step: parameter " + name + " has no gradient slot");
    for (float gval : p.grad()) {
      if (!std::isfinite(gval)) throw NumericError("non-finite gradient in parameter " + name);
    }
  }
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
      state.v.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adamw_step: optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, t);
  const double bc2 = 1.0 - std::pow(b2, t);
  // Moments are stored in float; the update itself is evaluated in double.
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<float> p = params[i].second;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = p.grad();
    auto theta = p.data();
    for (size_t k = 0; k < theta.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double step = (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps) + cfg.weight_decay * theta[k];
      theta[k] = static_cast<float>(theta[k] - lr * step);
    }
  }
}

namespace {

std::vector<int> labels_of(const std::vector<const WindowSample*>& batch) {
  std::vector<int> out;
  for (const auto* s : batch) out.push_back(s->label);
  return out;
}

}  // namespace

BatchOutcome accumulate_batch_gradients(ModelState& state, const std::vector<const WindowSample*>& batch,
                                        const std::vector<uint64_t>& keys, const TextBank& bank,
                                        const ClassStats& stats, const TrainConfig& cfg, uint64_t step) {
  if (batch.empty()) throw EmptySequenceError("empty training batch");
  const std::vector<int> labels = labels_of(batch);
  const std::span<const double> weights(stats.weights);
  double weight_sum = 0;
  for (int y : labels) weight_sum += stats.weights[static_cast<size_t>(y)];

  const DropoutContext dropout{CounterRng(splitmix64(cfg.seed ^ kDropoutStream)), step};
  const ForwardContext ctx{Mode::kTrain, &dropout};
  const Tensor<float>& text = bank.normalized;
  const ModelConfig& mc = state.config;

  BatchOutcome outcome;
  outcome.loss.lambda = cfg.lambda;
  const size_t micro = static_cast<size_t>(cfg.micro_batch());
  if (batch.size() <= micro || cfg.accumulation_steps == 1) {
    Graph<float> g;
    const auto input = make_batch<float>(batch, keys);
    const auto r = forward(g, state.params, mc, input, ctx);
    Tensor<float> cls = weighted_cross_entropy(g, r.logits, labels, weights, weight_sum);
    Tensor<float> total = cls;
    if (cfg.lambda != 0.0) {
      Tensor<float> con = contrastive_loss(g, r.fused.v, labels, text, cfg.tau);
      total = ops::add_scaled(g, cls, con, static_cast<float>(cfg.lambda));
      outcome.loss.l_con = con.item();
    }
    g.backward(total);
    outcome.loss.l_cls = cls.item();
    outcome.loss.l_total = total.item();
    outcome.predictions = argmax_rows(r.logits);
    return outcome;
  }

  std::vector<std::pair<size_t, size_t>> chunks;
  for (size_t begin = 0; begin < batch.size(); begin += micro) chunks.emplace_back(begin, std::min(batch.size(), begin + micro));
  auto slice = [&](const auto& v, std::pair<size_t, size_t> c) {
    return std::vector<typename std::decay_t<decltype(v)>::value_type>(v.begin() + static_cast<std::ptrdiff_t>(c.first),
                                                                     v.begin() + static_cast<std::ptrdiff_t>(c.second));
  };

  // Gradient of the full-batch contrastive loss w.r.t. the projections v.
  Tensor<float> dv;
  if (cfg.lambda != 0.0) {
    Tensor<float> v_all({static_cast<int64_t>(batch.size()), static_cast<int64_t>(mc.text_dim)});
    for (const auto& c : chunks) {
      Graph<float> g(false);
      const auto r = forward(g, state.params, mc, make_batch<float>(slice(batch, c), slice(keys, c)), ctx);
      std::copy(r.fused.v.data().begin(), r.fused.v.data().end(),
                v_all.data().begin() + static_cast<std::ptrdiff_t>(c.first) * mc.text_dim);
    }
    v_all.set_requires_grad(true);
    Graph<float> g;
    Tensor<float> con = contrastive_loss(g, v_all, labels, text, cfg.tau);
    g.backward(con);
    outcome.loss.l_con = con.item();
    dv = Tensor<float>(v_all.shape(), std::vector<float>(v_all.grad().begin(), v_all.grad().end()));
  }

  double cls_sum = 0;
  for (const auto& c : chunks) {
    Graph<float> g;
    const auto chunk_labels = slice(labels, c);
    const auto r = forward(g, state.params, mc, make_batch<float>(slice(batch, c), slice(keys, c)), ctx);
    Tensor<float> cls = weighted_cross_entropy(g, r.logits, chunk_labels, weights, weight_sum);
    Tensor<float> objective = cls;
    if (cfg.lambda != 0.0) {
      const int64_t n = static_cast<int64_t>(c.second - c.first);
      Tensor<float> dv_chunk({n, static_cast<int64_t>(mc.text_dim)},
                             std::vector<float>(dv.data().begin() + static_cast<std::ptrdiff_t>(c.first) * mc.text_dim,
                                                dv.data().begin() + static_cast<std::ptrdiff_t>(c.second) * mc.text_dim));
      Tensor<float> surrogate = ops::sum_product(g, r.fused.v, dv_chunk);
      objective = ops::add_scaled(g, cls, surrogate, static_cast<float>(cfg.lambda));
    }
    g.backward(objective);
    cls_sum += cls.item();
    const auto preds = argmax_rows(r.logits);
    outcome.predictions.insert(outcome.predictions.end(), preds.begin(), preds.end());
  }
  outcome.loss.l_cls = cls_sum;
  outcome.loss.l_total = cls_sum + cfg.lambda * outcome.loss.l_con;
  return outcome;
}

std::vector<int> predict(const ModelState& state, const std::vector<WindowSample>& samples, int workers) {
  const int64_t n = static_cast<int64_t>(samples.size());
  std::vector<int> out(samples.size());
  const int64_t chunks = (n + kEvalChunk - 1) / kEvalChunk;
  auto run = [&](int64_t first_chunk, int64_t stride) {
    for (int64_t c = first_chunk; c < chunks; c += stride) {
      const int64_t begin = c * kEvalChunk, end = std::min(n, begin + kEvalChunk);
      std::vector<const WindowSample*> batch;
      std::vector<uint64_t> keys;
      for (int64_t i = begin; i < end; ++i) {
        batch.push_back(&samples[static_cast<size_t>(i)]);
        keys.push_back(static_cast<uint64_t>(i));
      }
      Graph<float> g(false);
      const auto r = forward(g, state.params, state.config, make_batch<float>(batch, keys), ForwardContext{});
      const auto preds = argmax_rows(r.logits);
      std::copy(preds.begin(), preds.end(), out.begin() + begin);
    }
  };
  const int64_t threads = std::min<int64_t>(std::max(1, workers), std::max<int64_t>(1, chunks));
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    for (int64_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          run(t, threads);
        } catch (...) {
          errors[static_cast<size_t>(t)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return out;
}

MetricsReport evaluate(const ModelState& state, const std::vector<WindowSample>& samples, int workers) {
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  return macro_f1(predict(state, samples, workers), labels);
}

json to_json(const StepRecord& r) {
  return json{{"type", "step"},           {"epoch", r.epoch},          {"step", r.step},
              {"lr", r.lr},               {"l_total", r.loss.l_total}, {"l_cls", r.loss.l_cls},
              {"l_con", r.loss.l_con},    {"lambda", r.loss.lambda}};
}

json to_json(const EpochRecord& r) {
  return json{{"type", "epoch"}, {"epoch", r.epoch},        {"lr", r.lr},
              {"train", to_json(r.train)}, {"val", to_json(r.val)}, {"seconds", r.seconds}};
}

TrainResult train(const std::vector<WindowSample>& train_set, const std::vector<WindowSample>& val_set,
                  const TextBank& bank, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  model_cfg.validate();
  if (val_set.empty()) throw DataError("validation split is empty");
  if (bank.normalized.cols() != model_cfg.text_dim) {
    throw ConfigError("text bank width " + std::to_string(bank.normalized.cols()) + " does not match text_dim " +
                      std::to_string(model_cfg.text_dim));
  }
  for (const auto* split : {&train_set, &val_set}) {
    for (const auto& s : *split) {
      if (s.visual.dim != model_cfg.d_model || s.audio.dim != model_cfg.d_audio_in) {
        throw ConfigError("sample " + s.sample_id + " has visual/audio widths " + std::to_string(s.visual.dim) + "/" +
                          std::to_string(s.audio.dim) + ", model expects " + std::to_string(model_cfg.d_model) +
                          "/" + std::to_string(model_cfg.d_audio_in));
      }
    }
  }
  std::vector<int> train_labels;
  for (const auto& s : train_set) train_labels.push_back(s.label);
  const ClassStats stats = compute_class_stats(train_labels);

  ModelState state = make_model(model_cfg, cfg.seed, cfg.tau);
  const auto named = state.params.named();
  AdamWState opt;
  SeededStream shuffler(splitmix64(cfg.seed ^ kShuffleStream));
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::ofstream runlog;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    runlog.open(options.out_dir / "runlog.jsonl", std::ios::trunc);
    if (!runlog) throw DataError("cannot write " + (options.out_dir / "runlog.jsonl").string());
  }
  auto diverge = [&](const std::string& why) {
    if (!options.out_dir.empty()) {
      save_checkpoint(state, options.out_dir / "last_good.mmck", json{{"diverged", why}});
    }
    throw NumericError("training diverged: " + why);
  };

  TrainResult result;
  RunLog& log = result.log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(epoch, cfg);
    log.lr_trace.push_back(lr);
    shuffler.shuffle(order);

    std::vector<int> epoch_preds, epoch_labels;
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      std::vector<const WindowSample*> batch;
      std::vector<uint64_t> keys;
      for (size_t i = begin; i < end; ++i) {
        batch.push_back(&train_set[order[i]]);
        keys.push_back(order[i]);
        epoch_labels.push_back(train_set[order[i]].label);
      }
      state.params.zero_grad();
      const uint64_t step = static_cast<uint64_t>(opt.step + 1);
      BatchOutcome out;
      try {
        out = accumulate_batch_gradients(state, batch, keys, bank, stats, cfg, step);
      } catch (const Error& e) {
        if (e.category() != ErrorCategory::kNumeric) throw;
        diverge(std::string(e.what()) + " at step " + std::to_string(step));
      }
      if (!std::isfinite(out.loss.l_total)) diverge("non-finite loss at step " + std::to_string(step));
      try {
        adamw_step(named, opt, lr, cfg);
      } catch (const NumericError& e) {
        diverge(e.what());
      }
      epoch_preds.insert(epoch_preds.end(), out.predictions.begin(), out.predictions.end());
      StepRecord rec{epoch, opt.step, lr, out.loss};
      if (runlog.is_open()) runlog << to_json(rec).dump() << '\n';
      log.steps.push_back(rec);
    }

    EpochRecord er;
    er.epoch = epoch;
    er.lr = lr;
    er.train = macro_f1(epoch_preds, epoch_labels);
    er.val = evaluate(state, val_set, cfg.eval_workers);
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (er.val.macro_f1 > log.best_val_macro_f1) {
      log.best_val_macro_f1 = er.val.macro_f1;
      log.best_epoch = epoch;
      result.best = ModelState{state.config, clone_params(state.config, state.params), state.tau};
      if (!options.out_dir.empty()) {
        save_checkpoint(result.best, options.out_dir / "best.mmck",
                        json{{"epoch", epoch}, {"val_macro_f1", er.val.macro_f1}, {"seed", cfg.seed}});
      }
    }
    if (runlog.is_open()) runlog << to_json(er).dump() << '\n' << std::flush;
    log.epochs.push_back(er);
    if (options.on_epoch) options.on_epoch(er);
    if (options.stop_at_val_f1 > 0.0 && er.val.macro_f1 >= options.stop_at_val_f1) break;
  }
  return result;
}

std::vector<AblationRow> ablate_windows(const std::vector<int>& windows, const DatasetProvider& provider,
                                        const ModelConfig& model_cfg, const TrainConfig& cfg,
                                        const fs::path& out_dir) {
  for (int w : windows) {
    if (!is_supported_window(w)) throw ConfigError("window " + std::to_string(w) + " is not one of 10, 15, 30, 60");
  }
  std::vector<AblationRow> rows;
  for (int w : windows) {
    const auto t0 = std::chrono::steady_clock::now();
    const DatasetSplits data = provider(w);
    const TextBank bank = make_text_bank(data.text_bank);
    TrainOptions opts;
    if (!out_dir.empty()) opts.out_dir = out_dir / ("w" + std::to_string(w));
    const TrainResult r = train(data.train, data.val, bank, model_cfg, cfg, opts);
    rows.push_back(AblationRow{w, r.log.best_val_macro_f1, r.log.best_epoch,
                               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
  }
  return rows;
}

std::string format_window_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(11) << "Challenge" << std::setw(10) << "Metric" << std::setw(20) << "Method"
     << "Result\n";
  for (const auto& r : rows) {
    const std::string method = "Ours (" + std::to_string(r.window) + " frames)";
    os << std::left << std::setw(11) << "EXPR" << std::setw(10) << "Macro F1" << std::setw(20) << method << std::fixed
       << std::setprecision(4) << r.val_macro_f1 << '\n';
  }
  return os.str();
}

json to_json(const std::vector<AblationRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"window", r.window},
                   {"method", "Ours (" + std::to_string(r.window) + " frames)"},
                   {"macro_f1", r.val_macro_f1},
                   {"best_epoch", r.best_epoch},
                   {"seconds", r.seconds}});
  }
  return out;
}

}  // namespace mmfer
