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

#include "mmfer/diagnostics.hpp"

#include <chrono>
#include <iomanip>
#include <sstream>

#include "mmfer/objectives.hpp"
#include "mmfer/ops.hpp"
#include "mmfer/rng.hpp"

namespace mmfer {

ModelConfig gradcheck_config() {
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

namespace {

Tensor<double> randn(Shape s, SeededStream& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& x : t.data()) x = scale * rng.normal();
  return t;
}

}  // namespace

std::vector<LayerGradCheck> run_layer_grad_checks(uint64_t seed) {
  const ModelConfig cfg = gradcheck_config();
  const ModelState state = make_model(cfg, seed);
  const ModelParams<double> p = cast_params<double>(cfg, state.params);
  SeededStream rng(seed ^ 0x6C0CULL);

  const int64_t tv = 4, ta = 6;
  const Segments v_segs{{0, tv, 0}, {tv, tv, 1}};
  const Segments a_segs{{0, ta, 0}, {ta, ta, 1}};
  const auto x_v = randn({2 * tv, cfg.d_model}, rng);
  const auto x_a = randn({2 * ta, cfg.d_audio_in}, rng);
  const auto f_v = randn({2 * tv, cfg.d_model}, rng);
  const auto f_a = randn({2 * ta, cfg.d_model}, rng);
  const auto h_v = randn({2 * tv, cfg.d_model}, rng);
  const auto h_a = randn({2 * ta, cfg.d_model}, rng);
  Tensor<double> text = randn({kNumClasses, cfg.text_dim}, rng);
  {
    Graph<double> g(false);
    text = ops::l2_normalize_rows(g, text);
  }
  const std::vector<int> labels{2, 6};
  const std::vector<double> weights{1.0, 0.6, 1.4, 0.9, 1.1, 0.8, 1.3, 1.0};

  DropoutContext dropout{CounterRng(seed), 1};
  const ForwardContext ctx{Mode::kTrain, &dropout};
  const GradCheckOptions opts{1e-5, 800, seed};

  // Fixed weighting so every output coordinate gets its own gradient.
  auto reduce = [&](Graph<double>& g, const Tensor<double>& y) {
    SeededStream w(seed + static_cast<uint64_t>(y.numel()));
    return ops::sum_product(g, y, randn(y.shape(), w));
  };

  std::vector<LayerGradCheck> out;
  auto run = [&](const std::string& name, const std::function<Tensor<double>(Graph<double>&)>& f,
                 const std::vector<Tensor<double>>& params) {
    const auto t0 = std::chrono::steady_clock::now();
    LayerGradCheck row{name, grad_check(f, params, opts), 0.0};
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(row));
  };

  std::vector<Tensor<double>> tcn_params;
  for (const auto& b : p.tcn) tcn_params.insert(tcn_params.end(), {b.conv1_w, b.conv1_b, b.conv2_w, b.conv2_b});
  run("visual_tcn", [&](Graph<double>& g) { return reduce(g, visual_tcn(g, x_v, p, cfg, ctx, v_segs)); }, tcn_params);

  run("audio_adapter", [&](Graph<double>& g) { return reduce(g, audio_adapter(g, x_a, p, cfg, ctx, a_segs)); },
      {p.adapter_w, p.adapter_b, p.adapter_ln_gamma, p.adapter_ln_beta});

  auto attn_params = [](const AttentionParams<double>& a) {
    return std::vector<Tensor<double>>{a.w_q, a.w_k, a.w_v, a.w_o, a.ln_gamma, a.ln_beta};
  };
  run("cross_attention_v2a",
      [&](Graph<double>& g) {
        return reduce(g, cross_attention_block(g, f_v, f_a, p.v2a, cfg, ctx, dropout_site::kAttnV2A, v_segs, a_segs));
      },
      attn_params(p.v2a));
  run("cross_attention_a2v",
      [&](Graph<double>& g) {
        return reduce(g, cross_attention_block(g, f_a, f_v, p.a2v, cfg, ctx, dropout_site::kAttnA2V, a_segs, v_segs));
      },
      attn_params(p.a2v));

  std::vector<Tensor<double>> mlp_params;
  for (size_t i = 0; i < p.mlp_w.size(); ++i) mlp_params.insert(mlp_params.end(), {p.mlp_w[i], p.mlp_b[i]});
  run("classifier_mlp",
      [&](Graph<double>& g) { return reduce(g, pool_concat_classify(g, h_v, h_a, p, cfg, ctx, v_segs, a_segs).second); },
      mlp_params);

  run("projection", [&](Graph<double>& g) { return reduce(g, project_visual(g, h_v, p, v_segs)); },
      {p.proj_w, p.proj_b});

  Tensor<double> logits = randn({2, cfg.n_classes}, rng);
  logits.set_requires_grad(true);
  run("weighted_cross_entropy", [&](Graph<double>& g) { return weighted_cross_entropy(g, logits, labels, weights); },
      {logits});

  Tensor<double> raw = randn({2, cfg.text_dim}, rng);
  raw.set_requires_grad(true);
  run("contrastive_loss",
      [&](Graph<double>& g) { return contrastive_loss(g, ops::l2_normalize_rows(g, raw), labels, text, 0.07); },
      {raw});

  BatchInput<double> batch{x_v, v_segs, x_a, a_segs};
  run("full_model_combined_loss",
      [&](Graph<double>& g) {
        const auto r = forward(g, p, cfg, batch, ctx);
        return combined_loss(g, r.logits, labels, r.fused.v, text, weights, kDefaultLambda, kDefaultTau).total;
      },
      p.tensors());
  return out;
}

std::string format_grad_check_table(const std::vector<LayerGradCheck>& rows, double tolerance) {
  std::ostringstream os;
  os << std::left << std::setw(26) << "layer" << std::setw(16) << "max_rel_error" << std::setw(8) << "coords"
     << "status\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(26) << r.layer << std::setw(16) << std::scientific << std::setprecision(3)
       << r.result.max_rel_error << std::setw(8) << r.result.coordinates_checked
       << (r.result.max_rel_error <= tolerance ? "ok" : "FAIL") << '\n';
  }
  return os.str();
}

}  // namespace mmfer
