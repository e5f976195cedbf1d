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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmfer/dataset.hpp"
#include "mmfer/model.hpp"
#include "mmfer/objectives.hpp"

namespace mmfer {

struct TrainConfig {
  double lr = 1e-5;
  int epochs = 30;
  int batch_size = 64;
  int accumulation_steps = 4;  // micro-batch = batch_size / accumulation_steps
  uint64_t seed = 42;
  double lambda = kDefaultLambda;
  double tau = kDefaultTau;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr_min = 0.0;
  int eval_workers = 1;

  void validate() const;
  int micro_batch() const { return batch_size / accumulation_steps; }
};

nlohmann::json to_json(const TrainConfig& cfg);
// Keys missing from `j` keep the defaults; unknown keys raise ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

// Epoch-granularity cosine annealing from cfg.lr (epoch 0) to cfg.lr_min
// (last epoch).
double cosine_lr(int epoch, const TrainConfig& cfg);

struct AdamWState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  int64_t step = 0;
};

// One decoupled-weight-decay Adam update of every named parameter from its
// gradient slot. Increments state.step first, so the first call uses bias
// correction for step 1. Throws NumericError naming the first parameter with a
// non-finite gradient, before anything is modified.
void adamw_step(const std::vector<std::pair<std::string, Tensor<float>>>& params, AdamWState& state, double lr,
                const TrainConfig& cfg);

struct BatchOutcome {
  LossReport loss;
  std::vector<int> predictions;
};

// Gradients of the combined objective for one effective batch, accumulated in
// the parameters' gradient slots (which the caller zeroes). `keys` are the
// samples' dropout keys and `step` the dropout step counter.
//
// With accumulation_steps = 1 the whole batch goes through one graph. With
// more, micro-batches are processed one at a time: the class loss of each is
// normalized by the full batch's weight sum, and the contrastive loss, which
// couples all pairs in the batch, is computed once on the gathered projections
// and its gradient fed back to each micro-batch's graph. Both routes produce
// the gradient of the same full-batch objective.
BatchOutcome accumulate_batch_gradients(ModelState& state, const std::vector<const WindowSample*>& batch,
                                        const std::vector<uint64_t>& keys, const TextBank& bank,
                                        const ClassStats& stats, const TrainConfig& cfg, uint64_t step);

// Eval-mode predictions in fixed chunks of 64 samples; chunks are spread over
// `workers` threads, which does not change the result.
std::vector<int> predict(const ModelState& state, const std::vector<WindowSample>& samples, int workers = 1);
MetricsReport evaluate(const ModelState& state, const std::vector<WindowSample>& samples, int workers = 1);

struct StepRecord {
  int epoch = 0;
  int64_t step = 0;
  double lr = 0.0;
  LossReport loss;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  MetricsReport train;
  MetricsReport val;
  double seconds = 0.0;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::vector<double> lr_trace;
  int best_epoch = -1;
  double best_val_macro_f1 = -1.0;
};

nlohmann::json to_json(const StepRecord& r);
nlohmann::json to_json(const EpochRecord& r);

struct TrainOptions {
  // When set: best.mmck, runlog.jsonl and (on divergence) last_good.mmck are
  // written here.
  std::filesystem::path out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
  // Stop after the first epoch whose validation macro F1 reaches this value.
  // The learning-rate schedule still spans cfg.epochs. Disabled when <= 0.
  double stop_at_val_f1 = 0.0;
};

struct TrainResult {
  ModelState best;
  RunLog log;
};

// Seeded shuffle, micro-batched gradient accumulation, one AdamW step per
// effective batch, validation macro F1 every epoch, best checkpoint kept (ties
// keep the earlier epoch). Throws NumericError on divergence after writing the
// last good checkpoint.
TrainResult train(const std::vector<WindowSample>& train_set, const std::vector<WindowSample>& val_set,
                  const TextBank& bank, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const TrainOptions& options = {});

struct AblationRow {
  int window = 0;
  double val_macro_f1 = 0.0;
  int best_epoch = -1;
  double seconds = 0.0;
};

// Supplies the dataset for one window size.
using DatasetProvider = std::function<DatasetSplits(int window)>;

// Trains one model per window with identical configs and seeds. Each run's
// artifacts go to out_dir/w<window> when out_dir is set.
std::vector<AblationRow> ablate_windows(const std::vector<int>& windows, const DatasetProvider& provider,
                                        const ModelConfig& model_cfg, const TrainConfig& cfg,
                                        const std::filesystem::path& out_dir = {});

// Challenge | Metric | Method | Result, one row per window.
std::string format_window_table(const std::vector<AblationRow>& rows);
nlohmann::json to_json(const std::vector<AblationRow>& rows);

}  // namespace mmfer
