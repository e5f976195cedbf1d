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
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmfer/dataset.hpp"
#include "mmfer/ops.hpp"
#include "mmfer/tensor.hpp"

namespace mmfer {

// Architecture constants of the fusion head. The defaults are the full-size
// model; tests shrink d_model and friends for finite-difference checks.
struct ModelConfig {
  int d_model = 512;     // visual input width, TCN channels and attention width
  int d_audio_in = 768;
  int tcn_blocks = 6;
  int tcn_kernel = 3;
  std::vector<int> tcn_dilations{1, 2, 4, 8, 16, 32};
  int heads = 8;
  std::vector<int> mlp_hidden{512, 256};
  int n_classes = 8;
  double dropout_p = 0.1;
  int text_dim = 512;

  // Throws ConfigError on a violated invariant.
  void validate() const;
  // Frames of visual history that can reach one TCN output frame.
  int64_t receptive_field() const;
  int64_t parameter_count() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Keys missing from `j` keep the defaults; unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

template <class T>
struct TcnBlockParams {
  Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b;
};

template <class T>
struct AttentionParams {
  Tensor<T> w_q, w_k, w_v, w_o;  // d_model×d_model, no biases
  Tensor<T> ln_gamma, ln_beta;   // post-residual LayerNorm
};

template <class T>
struct ModelParams {
  std::vector<TcnBlockParams<T>> tcn;
  Tensor<T> adapter_w, adapter_b, adapter_ln_gamma, adapter_ln_beta;
  AttentionParams<T> v2a, a2v;
  std::vector<Tensor<T>> mlp_w, mlp_b;
  Tensor<T> proj_w, proj_b;

  // Every learnable tensor in declaration order, as aliasing handles.
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  std::vector<Tensor<T>> tensors() const;
  int64_t numel() const;
  void zero_grad();
};

// Zero-filled parameters of the right shapes (LayerNorm gains set to 1).
template <class T>
ModelParams<T> allocate_params(const ModelConfig& cfg);
// Uniform(±1/sqrt(fan_in)) weights and biases, unit LayerNorm gains.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed);
template <class U, class T>
ModelParams<U> cast_params(const ModelConfig& cfg, const ModelParams<T>& src);
// Deep copy.
template <class T>
ModelParams<T> clone_params(const ModelConfig& cfg, const ModelParams<T>& src);

// Row-stacked visual and audio sequences of a batch; segment keys identify
// samples for dropout.
template <class T>
struct BatchInput {
  Tensor<T> visual;
  Segments visual_segs;
  Tensor<T> audio;
  Segments audio_segs;
};

template <class T>
BatchInput<T> make_batch(const std::vector<const WindowSample*>& samples, const std::vector<uint64_t>& keys);

struct ForwardContext {
  Mode mode = Mode::kEval;
  const DropoutContext* dropout = nullptr;
};

// Dropout site ids; together with the sample key and step they address the
// counter-based generator.
namespace dropout_site {
inline constexpr uint32_t kTcnBase = 10;  // + 2·block + conv
inline constexpr uint32_t kAdapter = 100;
inline constexpr uint32_t kAttnV2A = 200;
inline constexpr uint32_t kAttnA2V = 201;
inline constexpr uint32_t kMlpBase = 300;  // + hidden layer
}  // namespace dropout_site

template <class T>
struct FusedRepresentation {
  Tensor<T> h_v2a;  // ΣT_v × d_model
  Tensor<T> h_a2v;  // ΣT_a × d_model
  Tensor<T> z;      // B × 2·d_model
  Tensor<T> v;      // B × text_dim, unit rows
};

template <class T>
struct ForwardResult {
  Tensor<T> logits;  // B × n_classes
  Tensor<T> f_v;
  Tensor<T> f_a;
  FusedRepresentation<T> fused;
};

// Stack of residual blocks, each conv→ReLU→dropout→conv→ReLU→dropout plus the
// identity, with dilation tcn_dilations[i].
template <class T>
Tensor<T> visual_tcn(Graph<T>& g, const Tensor<T>& x_v, const ModelParams<T>& p, const ModelConfig& cfg,
                     const ForwardContext& ctx, const Segments& segs);

// Per-timestep Linear → LayerNorm → ReLU → dropout from d_audio_in to d_model.
template <class T>
Tensor<T> audio_adapter(Graph<T>& g, const Tensor<T>& x_a, const ModelParams<T>& p, const ModelConfig& cfg,
                        const ForwardContext& ctx, const Segments& segs);

// MHA(q, kv, kv) = concat_h(softmax(Q_h K_hᵀ/√d_h) V_h)·W_o.
template <class T>
Tensor<T> multi_head_attention(Graph<T>& g, const Tensor<T>& q_seq, const Tensor<T>& kv_seq,
                               const AttentionParams<T>& a, int heads, const Segments& q_segs,
                               const Segments& kv_segs, std::vector<T>* weights_out = nullptr);

// LN(q + dropout(MHA(q, kv, kv))): post-norm residual.
template <class T>
Tensor<T> cross_attention_block(Graph<T>& g, const Tensor<T>& q_seq, const Tensor<T>& kv_seq,
                                const AttentionParams<T>& a, const ModelConfig& cfg, const ForwardContext& ctx,
                                uint32_t site, const Segments& q_segs, const Segments& kv_segs,
                                std::vector<T>* weights_out = nullptr);

// Both directions: (visual attends to audio, audio attends to visual).
template <class T>
std::pair<Tensor<T>, Tensor<T>> fuse(Graph<T>& g, const Tensor<T>& f_v, const Tensor<T>& f_a,
                                     const ModelParams<T>& p, const ModelConfig& cfg, const ForwardContext& ctx,
                                     const Segments& v_segs, const Segments& a_segs);

// z = [mean_t h_v2a ‖ mean_t h_a2v]; logits from the three-layer MLP.
// Returns (z, logits).
template <class T>
std::pair<Tensor<T>, Tensor<T>> pool_concat_classify(Graph<T>& g, const Tensor<T>& h_v2a, const Tensor<T>& h_a2v,
                                                     const ModelParams<T>& p, const ModelConfig& cfg,
                                                     const ForwardContext& ctx, const Segments& v_segs,
                                                     const Segments& a_segs);

// v = l2_normalize(W_p · mean_t h_v2a + b_p).
template <class T>
Tensor<T> project_visual(Graph<T>& g, const Tensor<T>& h_v2a, const ModelParams<T>& p, const Segments& v_segs);

template <class T>
ForwardResult<T> forward(Graph<T>& g, const ModelParams<T>& p, const ModelConfig& cfg, const BatchInput<T>& batch,
                         const ForwardContext& ctx);

// Full-precision trainable state plus the fixed contrastive temperature.
struct ModelState {
  ModelConfig config;
  ModelParams<float> params;
  double tau = 0.07;
};

ModelState make_model(const ModelConfig& cfg, uint64_t seed, double tau = 0.07);

// "MMCK" | u16 version | u32 length + config JSON | parameter blobs in
// declaration order, each in the feature tensor encoding.
inline constexpr uint16_t kCheckpointVersion = 1;
void save_checkpoint(const ModelState& state, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
// Returns the state and the stored metadata.
std::pair<ModelState, nlohmann::json> load_checkpoint(const std::filesystem::path& path);

}  // namespace mmfer
