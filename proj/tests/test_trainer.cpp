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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mmfer/errors.hpp"
#include "mmfer/rng.hpp"
#include "mmfer/trainer.hpp"

using namespace mmfer;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 16;
  c.d_audio_in = 12;
  c.tcn_blocks = 2;
  c.tcn_dilations = {1, 2};
  c.heads = 2;
  c.mlp_hidden = {12, 10};
  c.text_dim = 8;
  return c;
}

// Gaussian class clusters at the tiny config's widths.
std::vector<WindowSample> tiny_samples(int per_class, double separation, uint64_t seed, uint64_t means_seed = 1) {
  SeededStream means(means_seed), rng(seed);
  std::vector<std::vector<double>> mv, ma;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<double> v(16), a(12);
    for (auto& x : v) x = separation * means.normal() / 4;
    for (auto& x : a) x = separation * means.normal() / 3.5;
    mv.push_back(v);
    ma.push_back(a);
  }
  std::vector<WindowSample> out;
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < kNumClasses; ++c) {
      WindowSample s;
      s.sample_id = "s" + std::to_string(out.size());
      s.label = c;
      s.visual = {Modality::kVisual, 5, 16, {}};
      s.audio = {Modality::kAudio, 7, 12, {}};
      for (int t = 0; t < 5; ++t) {
        for (int k = 0; k < 16; ++k) s.visual.values.push_back(static_cast<float>(mv[c][k] + 0.5 * rng.normal()));
      }
      for (int t = 0; t < 7; ++t) {
        for (int k = 0; k < 12; ++k) s.audio.values.push_back(static_cast<float>(ma[c][k] + 0.5 * rng.normal()));
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

TextBank tiny_bank() {
  FeatureSequence emb{Modality::kText, 8, 8, std::vector<float>(64, 0.0f)};
  for (int j = 0; j < 8; ++j) emb.values[static_cast<size_t>(j * 8 + j)] = 1.0f;
  return make_text_bank(emb);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mmfer_test_trainer_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double relative_diff(const ModelParams<float>& a, const ModelParams<float>& b) {
  double num = 0, den = 0;
  const auto x = a.named(), y = b.named();
  for (size_t i = 0; i < x.size(); ++i) {
    for (int64_t e = 0; e < x[i].second.numel(); ++e) {
      const double d = double(x[i].second[e]) - double(y[i].second[e]);
      num += d * d;
      den += double(y[i].second[e]) * double(y[i].second[e]);
    }
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST(TrainConfig, DefaultsAndValidation) {
  const TrainConfig c;
  EXPECT_EQ(c.lr, 1e-5);
  EXPECT_EQ(c.epochs, 30);
  EXPECT_EQ(c.batch_size, 64);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.lambda, 0.1);
  EXPECT_EQ(c.micro_batch(), 16);
  EXPECT_NO_THROW(c.validate());
  TrainConfig bad;
  bad.accumulation_steps = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.lr = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKey) {
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 3;
  c.beta2 = 0.99;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(back.lr, 1e-3);
  EXPECT_EQ(back.epochs, 3);
  EXPECT_EQ(back.beta2, 0.99);
  try {
    train_config_from_json({{"learning_rate", 1.0}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(CosineLr, Examples) {
  TrainConfig c;
  EXPECT_EQ(cosine_lr(0, c), 1e-5);
  EXPECT_NEAR(cosine_lr(29, c), 0.0, 1e-20);
  c.epochs = 31;
  EXPECT_NEAR(cosine_lr(15, c), 0.5e-5, 1e-20);
  c.lr_min = 1e-6;
  EXPECT_NEAR(cosine_lr(30, c), 1e-6, 1e-20);
  EXPECT_THROW(cosine_lr(31, c), ParameterError);
  c.epochs = 1;
  EXPECT_EQ(cosine_lr(0, c), c.lr);
}

TEST(AdamW, Examples) {
  TrainConfig c;
  c.weight_decay = 0.0;
  Tensor<float> theta({1}, std::vector<float>{1.0f}, true);
  std::vector<std::pair<std::string, Tensor<float>>> params{{"theta", theta}};

  AdamWState still;
  adamw_step(params, still, 0.1, c);
  EXPECT_EQ(theta[0], 1.0f);
  EXPECT_EQ(still.step, 1);

  AdamWState s;
  theta.grad()[0] = 1.0f;
  adamw_step(params, s, 0.1, c);
  EXPECT_NEAR(theta[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-7);
  EXPECT_NEAR(theta[0], 0.9, 1e-6);

  c.weight_decay = 0.01;
  theta[0] = 2.0f;
  theta.zero_grad();
  AdamWState d;
  for (int k = 1; k <= 3; ++k) {
    adamw_step(params, d, 0.1, c);
    EXPECT_NEAR(theta[0], 2.0 * std::pow(1 - 0.1 * 0.01, k), 1e-6);
  }
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  Tensor<float> a({2}, true), b({2}, true);
  b.grad()[1] = std::numeric_limits<float>::quiet_NaN();
  std::vector<std::pair<std::string, Tensor<float>>> params{{"first", a}, {"second.weight", b}};
  AdamWState s;
  try {
    adamw_step(params, s, 0.1, TrainConfig{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("second.weight"), std::string::npos);
  }
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(a[0], 0.0f);
}

TEST(Accumulation, MicroBatchesMatchOneBatch) {
  const auto cfg = tiny_config();
  const auto data = tiny_samples(8, 4.0, 3);
  const auto stats = compute_class_stats([&] {
    std::vector<int> l;
    for (const auto& s : data) l.push_back(s.label);
    return l;
  }());
  std::vector<const WindowSample*> batch;
  std::vector<uint64_t> keys;
  for (size_t i = 0; i < 64; ++i) {
    batch.push_back(&data[(i * 7) % data.size()]);
    keys.push_back((i * 7) % data.size());
  }
  const auto bank = tiny_bank();
  TrainConfig one;
  one.accumulation_steps = 1;
  TrainConfig four;
  four.accumulation_steps = 4;

  ModelState a = make_model(cfg, 42), b = make_model(cfg, 42);
  const auto la = accumulate_batch_gradients(a, batch, keys, bank, stats, one, 1);
  const auto lb = accumulate_batch_gradients(b, batch, keys, bank, stats, four, 1);
  EXPECT_NEAR(la.loss.l_total, lb.loss.l_total, 1e-5);
  EXPECT_NEAR(la.loss.l_con, lb.loss.l_con, 1e-6);
  EXPECT_EQ(la.predictions, lb.predictions);

  double num = 0, den = 0;
  const auto ga = a.params.named(), gb = b.params.named();
  for (size_t i = 0; i < ga.size(); ++i) {
    for (int64_t e = 0; e < ga[i].second.numel(); ++e) {
      const double d = double(ga[i].second.grad()[e]) - gb[i].second.grad()[e];
      num += d * d;
      den += double(ga[i].second.grad()[e]) * ga[i].second.grad()[e];
    }
  }
  EXPECT_LE(std::sqrt(num / den), 1e-5);

  AdamWState sa, sb;
  adamw_step(a.params.named(), sa, one.lr, one);
  adamw_step(b.params.named(), sb, four.lr, four);
  EXPECT_LE(relative_diff(b.params, a.params), 1e-5);
}

TEST(Train, LearnsSeparableTinyData) {
  const auto cfg = tiny_config();
  TrainConfig t;
  t.lr = 3e-3;
  t.epochs = 30;
  t.batch_size = 16;
  t.accumulation_steps = 2;
  const auto r = train(tiny_samples(12, 4.0, 1), tiny_samples(6, 4.0, 2), tiny_bank(), cfg, t);
  EXPECT_GE(r.log.best_val_macro_f1, 0.95);
  ASSERT_EQ(r.log.epochs.size(), 30u);
  ASSERT_EQ(r.log.lr_trace.size(), 30u);
  for (int e = 0; e < 30; ++e) EXPECT_EQ(r.log.lr_trace[static_cast<size_t>(e)], cosine_lr(e, t));
  // 96 samples in batches of 16: six optimizer steps per epoch.
  EXPECT_EQ(r.log.steps.size(), 180u);
  EXPECT_EQ(r.log.steps.back().step, 180);
  for (const auto& s : r.log.steps) EXPECT_NEAR(s.loss.l_total, s.loss.l_cls + 0.1 * s.loss.l_con, 1e-6);
}

TEST(Train, DeterministicAcrossRuns) {
  const auto cfg = tiny_config();
  TrainConfig t;
  t.lr = 1e-3;
  t.epochs = 3;
  t.batch_size = 16;
  const auto tr = tiny_samples(4, 4.0, 1), va = tiny_samples(2, 4.0, 2);
  const auto d1 = fresh_dir("det1"), d2 = fresh_dir("det2");
  TrainOptions o1, o2;
  o1.out_dir = d1;
  o2.out_dir = d2;
  const auto r1 = train(tr, va, tiny_bank(), cfg, t, o1);
  const auto r2 = train(tr, va, tiny_bank(), cfg, t, o2);
  ASSERT_EQ(r1.log.steps.size(), r2.log.steps.size());
  for (size_t i = 0; i < r1.log.steps.size(); ++i) {
    EXPECT_EQ(r1.log.steps[i].loss.l_total, r2.log.steps[i].loss.l_total);
    EXPECT_EQ(r1.log.steps[i].loss.l_cls, r2.log.steps[i].loss.l_cls);
    EXPECT_EQ(r1.log.steps[i].loss.l_con, r2.log.steps[i].loss.l_con);
  }
  EXPECT_EQ(slurp(d1 / "best.mmck"), slurp(d2 / "best.mmck"));
  EXPECT_TRUE(fs::exists(d1 / "runlog.jsonl"));

  t.seed = 7;
  const auto r3 = train(tr, va, tiny_bank(), cfg, t);
  EXPECT_NE(r3.log.steps[0].loss.l_total, r1.log.steps[0].loss.l_total);
}

TEST(Train, LambdaChangesTotalFromFirstStep) {
  const auto cfg = tiny_config();
  TrainConfig t;
  t.epochs = 1;
  t.batch_size = 16;
  const auto tr = tiny_samples(2, 4.0, 1), va = tiny_samples(1, 4.0, 2);
  const auto with = train(tr, va, tiny_bank(), cfg, t);
  t.lambda = 0.0;
  const auto without = train(tr, va, tiny_bank(), cfg, t);
  EXPECT_NE(with.log.steps[0].loss.l_total, without.log.steps[0].loss.l_total);
  EXPECT_EQ(with.log.steps[0].loss.l_cls, without.log.steps[0].loss.l_cls);
  EXPECT_EQ(without.log.steps[0].loss.l_total, without.log.steps[0].loss.l_cls);
}

TEST(Train, BestCheckpointReproducesLoggedScore) {
  const auto cfg = tiny_config();
  TrainConfig t;
  t.lr = 2e-3;
  t.epochs = 4;
  t.batch_size = 16;
  const auto va = tiny_samples(3, 2.0, 2);
  const auto dir = fresh_dir("best");
  TrainOptions o;
  o.out_dir = dir;
  int seen = 0;
  o.on_epoch = [&](const EpochRecord&) { ++seen; };
  const auto r = train(tiny_samples(4, 2.0, 1), va, tiny_bank(), cfg, t, o);
  EXPECT_EQ(seen, 4);
  const auto [state, meta] = load_checkpoint(dir / "best.mmck");
  EXPECT_EQ(meta.at("epoch").get<int>(), r.log.best_epoch);
  EXPECT_EQ(evaluate(state, va).macro_f1, r.log.best_val_macro_f1);
  EXPECT_EQ(r.log.epochs[static_cast<size_t>(r.log.best_epoch)].val.macro_f1, r.log.best_val_macro_f1);
  for (int e = 0; e < r.log.best_epoch; ++e) {
    EXPECT_LT(r.log.epochs[static_cast<size_t>(e)].val.macro_f1, r.log.best_val_macro_f1);
  }
  for (size_t e = static_cast<size_t>(r.log.best_epoch) + 1; e < r.log.epochs.size(); ++e) {
    EXPECT_LE(r.log.epochs[e].val.macro_f1, r.log.best_val_macro_f1);
  }

  std::ifstream log(dir / "runlog.jsonl");
  int steps = 0, epochs = 0;
  for (std::string line; std::getline(log, line);) {
    const auto j = nlohmann::json::parse(line);
    (j.at("type") == "step" ? steps : epochs)++;
  }
  EXPECT_EQ(steps, static_cast<int>(r.log.steps.size()));
  EXPECT_EQ(epochs, 4);
}

TEST(Train, DivergenceWritesLastGoodCheckpoint) {
  const auto cfg = tiny_config();
  TrainConfig t;
  t.epochs = 1;
  t.batch_size = 16;
  auto tr = tiny_samples(2, 4.0, 1);
  tr[3].visual.values[0] = std::numeric_limits<float>::infinity();
  const auto dir = fresh_dir("diverge");
  TrainOptions o;
  o.out_dir = dir;
  EXPECT_THROW(train(tr, tiny_samples(1, 4.0, 2), tiny_bank(), cfg, t, o), NumericError);
  EXPECT_TRUE(fs::exists(dir / "last_good.mmck"));
  const auto [state, meta] = load_checkpoint(dir / "last_good.mmck");
  EXPECT_TRUE(meta.contains("diverged"));
}

TEST(Train, MissingClassInTrainingSplit) {
  auto tr = tiny_samples(2, 4.0, 1);
  std::erase_if(tr, [](const WindowSample& s) { return s.label == 3; });
  EXPECT_THROW(train(tr, tiny_samples(1, 4.0, 2), tiny_bank(), tiny_config(), TrainConfig{}), MissingClassError);
}

TEST(Predict, IndependentOfWorkerCount) {
  const auto cfg = tiny_config();
  const auto m = make_model(cfg, 9);
  const auto samples = tiny_samples(30, 1.0, 4);  // 240 samples, four chunks
  const auto p1 = predict(m, samples, 1);
  EXPECT_EQ(p1, predict(m, samples, 3));
  EXPECT_EQ(p1, predict(m, samples, 8));
}

TEST(Ablation, TableLayoutAndSingleWindowConsistency) {
  std::vector<AblationRow> rows{{10, 0.9875, 3, 1.0}, {60, 0.5, 1, 1.0}};
  const auto table = format_window_table(rows);
  EXPECT_EQ(table.substr(0, table.find('\n')).find("Challenge"), 0u);
  for (const char* col : {"Metric", "Method", "Result"}) EXPECT_NE(table.find(col), std::string::npos);
  EXPECT_NE(table.find("Ours (10 frames)"), std::string::npos);
  EXPECT_NE(table.find("0.9875"), std::string::npos);
  EXPECT_NE(table.find("Ours (60 frames)"), std::string::npos);
  EXPECT_EQ(to_json(rows).size(), 2u);

  // A one-window ablation equals a direct train on the same data.
  const auto cfg = tiny_config();
  TrainConfig t;
  t.lr = 1e-3;
  t.epochs = 2;
  t.batch_size = 16;
  DatasetSplits data;
  data.train = tiny_samples(2, 4.0, 1);
  data.val = tiny_samples(1, 4.0, 2);
  data.text_bank = tiny_bank().embeddings;
  const auto direct = train(data.train, data.val, tiny_bank(), cfg, t);
  const auto ab = ablate_windows({10}, [&](int) { return data; }, cfg, t);
  ASSERT_EQ(ab.size(), 1u);
  EXPECT_EQ(ab[0].window, 10);
  EXPECT_EQ(ab[0].val_macro_f1, direct.log.best_val_macro_f1);
  EXPECT_EQ(ab[0].best_epoch, direct.log.best_epoch);
  EXPECT_THROW(ablate_windows({20}, [&](int) { return data; }, cfg, t), ConfigError);
}
