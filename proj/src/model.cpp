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

#include "mmfer/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "mmfer/errors.hpp"
#include "mmfer/feature_io.hpp"
#include "mmfer/rng.hpp"

namespace mmfer {

using nlohmann::json;

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
  if (d_model < 2) fail("d_model must be at least 2");
  if (heads < 1 || d_model % heads != 0) {
    fail("d_model " + std::to_string(d_model) + " is not divisible by heads " + std::to_string(heads));
  }
  if (d_audio_in < 1 || text_dim < 1 || n_classes < 2) fail("dimensions must be positive");
  if (tcn_kernel < 1) fail("tcn_kernel must be at least 1");
  if (tcn_blocks < 0 || static_cast<int>(tcn_dilations.size()) != tcn_blocks) {
    fail("tcn_dilations must have tcn_blocks entries");
  }
  for (size_t i = 0; i < tcn_dilations.size(); ++i) {
    const int d = tcn_dilations[i];
    if (d < 1 || (d & (d - 1)) != 0) fail("tcn dilation " + std::to_string(d) + " is not a power of two");
    if (i > 0 && d <= tcn_dilations[i - 1]) fail("tcn dilations must be strictly increasing");
  }
  if (mlp_hidden.empty()) fail("mlp_hidden must not be empty");
  for (int h : mlp_hidden) {
    if (h < 1) fail("mlp_hidden widths must be positive");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
}

int64_t ModelConfig::receptive_field() const {
  int64_t sum = 0;
  for (int d : tcn_dilations) sum += d;
  return 1 + 2 * static_cast<int64_t>(tcn_kernel - 1) * sum;
}

int64_t ModelConfig::parameter_count() const {
  const int64_t d = d_model;
  int64_t n = 0;
  n += static_cast<int64_t>(tcn_blocks) * 2 * (tcn_kernel * d * d + d);
  n += static_cast<int64_t>(d_audio_in) * d + d + 2 * d;
  n += 2 * (4 * d * d + 2 * d);
  int64_t in = 2 * d;
  for (int h : mlp_hidden) {
    n += in * h + h;
    in = h;
  }
  n += in * n_classes + n_classes;
  n += d * text_dim + text_dim;
  return n;
}

json to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},         {"d_audio_in", c.d_audio_in}, {"tcn_blocks", c.tcn_blocks},
              {"tcn_kernel", c.tcn_kernel},   {"tcn_dilations", c.tcn_dilations}, {"heads", c.heads},
              {"mlp_hidden", c.mlp_hidden},   {"n_classes", c.n_classes}, {"dropout_p", c.dropout_p},
              {"text_dim", c.text_dim}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "d_model") c.d_model = value.get<int>();
      else if (key == "d_audio_in") c.d_audio_in = value.get<int>();
      else if (key == "tcn_blocks") c.tcn_blocks = value.get<int>();
      else if (key == "tcn_kernel") c.tcn_kernel = value.get<int>();
      else if (key == "tcn_dilations") c.tcn_dilations = value.get<std::vector<int>>();
      else if (key == "heads") c.heads = value.get<int>();
      else if (key == "mlp_hidden") c.mlp_hidden = value.get<std::vector<int>>();
      else if (key == "n_classes") c.n_classes = value.get<int>();
      else if (key == "dropout_p") c.dropout_p = value.get<double>();
      else if (key == "text_dim") c.text_dim = value.get<int>();
      else throw ConfigError("unknown model config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("model config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (size_t i = 0; i < tcn.size(); ++i) {
    const std::string pre = "tcn." + std::to_string(i) + ".";
    out.emplace_back(pre + "conv1.weight", tcn[i].conv1_w);
    out.emplace_back(pre + "conv1.bias", tcn[i].conv1_b);
    out.emplace_back(pre + "conv2.weight", tcn[i].conv2_w);
    out.emplace_back(pre + "conv2.bias", tcn[i].conv2_b);
  }
  out.emplace_back("adapter.weight", adapter_w);
  out.emplace_back("adapter.bias", adapter_b);
  out.emplace_back("adapter.ln.gamma", adapter_ln_gamma);
  out.emplace_back("adapter.ln.beta", adapter_ln_beta);
  for (const auto& [name, a] : {std::pair<std::string, const AttentionParams<T>*>{"attn_v2a", &v2a},
                                std::pair<std::string, const AttentionParams<T>*>{"attn_a2v", &a2v}}) {
    out.emplace_back(name + ".w_q", a->w_q);
    out.emplace_back(name + ".w_k", a->w_k);
    out.emplace_back(name + ".w_v", a->w_v);
    out.emplace_back(name + ".w_o", a->w_o);
    out.emplace_back(name + ".ln.gamma", a->ln_gamma);
    out.emplace_back(name + ".ln.beta", a->ln_beta);
  }
  for (size_t i = 0; i < mlp_w.size(); ++i) {
    out.emplace_back("mlp." + std::to_string(i) + ".weight", mlp_w[i]);
    out.emplace_back("mlp." + std::to_string(i) + ".bias", mlp_b[i]);
  }
  out.emplace_back("proj.weight", proj_w);
  out.emplace_back("proj.bias", proj_b);
  return out;
}

template <class T>
std::vector<Tensor<T>> ModelParams<T>::tensors() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

template <class T>
int64_t ModelParams<T>::numel() const {
  int64_t n = 0;
  for (const auto& [name, t] : named()) n += t.numel();
  return n;
}

template <class T>
void ModelParams<T>::zero_grad() {
  for (auto& [name, t] : named()) t.zero_grad();
}

template <class T>
ModelParams<T> allocate_params(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t d = cfg.d_model;
  auto param = [](Shape s) { return Tensor<T>(std::move(s), true); };
  auto ones = [](int64_t n) {
    Tensor<T> t(Shape{n}, std::vector<T>(static_cast<size_t>(n), T(1)), true);
    return t;
  };
  ModelParams<T> p;
  for (int b = 0; b < cfg.tcn_blocks; ++b) {
    p.tcn.push_back({param({cfg.tcn_kernel, d, d}), param({d}), param({cfg.tcn_kernel, d, d}), param({d})});
  }
  p.adapter_w = param({cfg.d_audio_in, d});
  p.adapter_b = param({d});
  p.adapter_ln_gamma = ones(d);
  p.adapter_ln_beta = param({d});
  for (AttentionParams<T>* a : {&p.v2a, &p.a2v}) {
    a->w_q = param({d, d});
    a->w_k = param({d, d});
    a->w_v = param({d, d});
    a->w_o = param({d, d});
    a->ln_gamma = ones(d);
    a->ln_beta = param({d});
  }
  int64_t in = 2 * d;
  std::vector<int64_t> widths(cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
  widths.push_back(cfg.n_classes);
  for (int64_t w : widths) {
    p.mlp_w.push_back(param({in, w}));
    p.mlp_b.push_back(param({w}));
    in = w;
  }
  p.proj_w = param({d, cfg.text_dim});
  p.proj_b = param({cfg.text_dim});
  return p;
}

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
  ModelParams<T> p = allocate_params<T>(cfg);
  SeededStream rng(seed);
  auto fill = [&rng](Tensor<T>& t, int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : t.data()) x = static_cast<T>(rng.uniform(-bound, bound));
  };
  const int64_t d = cfg.d_model;
  for (auto& b : p.tcn) {
    fill(b.conv1_w, cfg.tcn_kernel * d);
    fill(b.conv1_b, cfg.tcn_kernel * d);
    fill(b.conv2_w, cfg.tcn_kernel * d);
    fill(b.conv2_b, cfg.tcn_kernel * d);
  }
  fill(p.adapter_w, cfg.d_audio_in);
  fill(p.adapter_b, cfg.d_audio_in);
  for (AttentionParams<T>* a : {&p.v2a, &p.a2v}) {
    fill(a->w_q, d);
    fill(a->w_k, d);
    fill(a->w_v, d);
    fill(a->w_o, d);
  }
  for (size_t i = 0; i < p.mlp_w.size(); ++i) {
    fill(p.mlp_w[i], p.mlp_w[i].dim(0));
    fill(p.mlp_b[i], p.mlp_w[i].dim(0));
  }
  fill(p.proj_w, d);
  fill(p.proj_b, d);
  return p;
}

template <class U, class T>
ModelParams<U> cast_params(const ModelConfig& cfg, const ModelParams<T>& src) {
  ModelParams<U> dst = allocate_params<U>(cfg);
  auto to = dst.named();
  auto from = src.named();
  if (to.size() != from.size()) throw ContractError("cast_params: parameter layout mismatch");
  for (size_t i = 0; i < to.size(); ++i) {
    if (to[i].second.shape() != from[i].second.shape()) {
      throw ShapeError("cast_params: " + from[i].first + " has shape " + shape_to_string(from[i].second.shape()));
    }
    for (int64_t e = 0; e < from[i].second.numel(); ++e) to[i].second[e] = static_cast<U>(from[i].second[e]);
  }
  return dst;
}

template <class T>
ModelParams<T> clone_params(const ModelConfig& cfg, const ModelParams<T>& src) {
  return cast_params<T, T>(cfg, src);
}

template <class T>
BatchInput<T> make_batch(const std::vector<const WindowSample*>& samples, const std::vector<uint64_t>& keys) {
  if (samples.empty()) throw EmptySequenceError("empty batch");
  if (keys.size() != samples.size()) throw ContractError("make_batch: one key per sample required");
  const int64_t dv = samples.front()->visual.dim, da = samples.front()->audio.dim;
  int64_t nv = 0, na = 0;
  for (const auto* s : samples) {
    if (s->visual.dim != dv || s->audio.dim != da) throw ShapeError("make_batch: feature widths differ across samples");
    if (s->visual.frames < 1) throw EmptySequenceError(s->sample_id + ": no visual frames");
    if (s->audio.frames < 1) throw EmptySequenceError(s->sample_id + ": no audio frames");
    nv += s->visual.frames;
    na += s->audio.frames;
  }
  BatchInput<T> b;
  b.visual = Tensor<T>({nv, dv});
  b.audio = Tensor<T>({na, da});
  int64_t ov = 0, oa = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto* s = samples[i];
    for (size_t e = 0; e < s->visual.values.size(); ++e) b.visual[ov * dv + static_cast<int64_t>(e)] = s->visual.values[e];
    for (size_t e = 0; e < s->audio.values.size(); ++e) b.audio[oa * da + static_cast<int64_t>(e)] = s->audio.values[e];
    b.visual_segs.push_back({ov, s->visual.frames, keys[i]});
    b.audio_segs.push_back({oa, s->audio.frames, keys[i]});
    ov += s->visual.frames;
    oa += s->audio.frames;
  }
  return b;
}

template <class T>
Tensor<T> visual_tcn(Graph<T>& g, const Tensor<T>& x_v, const ModelParams<T>& p, const ModelConfig& cfg,
                     const ForwardContext& ctx, const Segments& segs) {
  if (x_v.ndim() != 2 || x_v.dim(1) != cfg.d_model) {
    throw ShapeError("visual_tcn expects width " + std::to_string(cfg.d_model) + ", got " + shape_to_string(x_v.shape()));
  }
  if (static_cast<int>(p.tcn.size()) != cfg.tcn_blocks) throw ContractError("visual_tcn: block count mismatch");
  Tensor<T> h = x_v;
  for (int i = 0; i < cfg.tcn_blocks; ++i) {
    const auto& blk = p.tcn[static_cast<size_t>(i)];
    const int dil = cfg.tcn_dilations[static_cast<size_t>(i)];
    const uint32_t site = dropout_site::kTcnBase + 2 * static_cast<uint32_t>(i);
    Tensor<T> y = ops::conv1d_causal(g, h, blk.conv1_w, blk.conv1_b, dil, segs);
    y = ops::dropout(g, ops::relu(g, y), cfg.dropout_p, ctx.mode, ctx.dropout, site, segs);
    y = ops::conv1d_causal(g, y, blk.conv2_w, blk.conv2_b, dil, segs);
    y = ops::dropout(g, ops::relu(g, y), cfg.dropout_p, ctx.mode, ctx.dropout, site + 1, segs);
    h = ops::add(g, h, y);
  }
  return h;
}

template <class T>
Tensor<T> audio_adapter(Graph<T>& g, const Tensor<T>& x_a, const ModelParams<T>& p, const ModelConfig& cfg,
                        const ForwardContext& ctx, const Segments& segs) {
  if (x_a.ndim() != 2 || x_a.dim(1) != cfg.d_audio_in) {
    throw ShapeError("audio_adapter expects width " + std::to_string(cfg.d_audio_in) + ", got " +
                     shape_to_string(x_a.shape()));
  }
  Tensor<T> y = ops::linear(g, x_a, p.adapter_w, p.adapter_b);
  y = ops::layer_norm(g, y, p.adapter_ln_gamma, p.adapter_ln_beta, 1e-5);
  y = ops::relu(g, y);
  return ops::dropout(g, y, cfg.dropout_p, ctx.mode, ctx.dropout, dropout_site::kAdapter, segs);
}

template <class T>
Tensor<T> multi_head_attention(Graph<T>& g, const Tensor<T>& q_seq, const Tensor<T>& kv_seq,
                               const AttentionParams<T>& a, int heads, const Segments& q_segs,
                               const Segments& kv_segs, std::vector<T>* weights_out) {
  const Tensor<T> undefined;
  Tensor<T> q = ops::linear(g, q_seq, a.w_q, undefined);
  Tensor<T> k = ops::linear(g, kv_seq, a.w_k, undefined);
  Tensor<T> v = ops::linear(g, kv_seq, a.w_v, undefined);
  Tensor<T> o = ops::attention(g, q, k, v, heads, q_segs, kv_segs, weights_out);
  return ops::linear(g, o, a.w_o, undefined);
}

template <class T>
Tensor<T> cross_attention_block(Graph<T>& g, const Tensor<T>& q_seq, const Tensor<T>& kv_seq,
                                const AttentionParams<T>& a, const ModelConfig& cfg, const ForwardContext& ctx,
                                uint32_t site, const Segments& q_segs, const Segments& kv_segs,
                                std::vector<T>* weights_out) {
  if (q_seq.ndim() != 2 || kv_seq.ndim() != 2 || q_seq.dim(1) != cfg.d_model || kv_seq.dim(1) != cfg.d_model) {
    throw ShapeError("cross_attention_block expects width " + std::to_string(cfg.d_model) + ": q " +
                     shape_to_string(q_seq.shape()) + ", kv " + shape_to_string(kv_seq.shape()));
  }
  Tensor<T> m = multi_head_attention(g, q_seq, kv_seq, a, cfg.heads, q_segs, kv_segs, weights_out);
  m = ops::dropout(g, m, cfg.dropout_p, ctx.mode, ctx.dropout, site, q_segs);
  return ops::layer_norm(g, ops::add(g, q_seq, m), a.ln_gamma, a.ln_beta, 1e-5);
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> fuse(Graph<T>& g, const Tensor<T>& f_v, const Tensor<T>& f_a,
                                     const ModelParams<T>& p, const ModelConfig& cfg, const ForwardContext& ctx,
                                     const Segments& v_segs, const Segments& a_segs) {
  Tensor<T> h_v2a = cross_attention_block(g, f_v, f_a, p.v2a, cfg, ctx, dropout_site::kAttnV2A, v_segs, a_segs);
  Tensor<T> h_a2v = cross_attention_block(g, f_a, f_v, p.a2v, cfg, ctx, dropout_site::kAttnA2V, a_segs, v_segs);
  return {h_v2a, h_a2v};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> pool_concat_classify(Graph<T>& g, const Tensor<T>& h_v2a, const Tensor<T>& h_a2v,
                                                     const ModelParams<T>& p, const ModelConfig& cfg,
                                                     const ForwardContext& ctx, const Segments& v_segs,
                                                     const Segments& a_segs) {
  Tensor<T> z = ops::concat_cols(g, ops::mean_pool_time(g, h_v2a, v_segs), ops::mean_pool_time(g, h_a2v, a_segs));
  const Segments rows = row_segments(v_segs);
  Tensor<T> h = z;
  const size_t last = p.mlp_w.size() - 1;
  for (size_t i = 0; i < last; ++i) {
    h = ops::relu(g, ops::linear(g, h, p.mlp_w[i], p.mlp_b[i]));
    h = ops::dropout(g, h, cfg.dropout_p, ctx.mode, ctx.dropout, dropout_site::kMlpBase + static_cast<uint32_t>(i),
                     rows);
  }
  return {z, ops::linear(g, h, p.mlp_w[last], p.mlp_b[last])};
}

template <class T>
Tensor<T> project_visual(Graph<T>& g, const Tensor<T>& h_v2a, const ModelParams<T>& p, const Segments& v_segs) {
  Tensor<T> pooled = ops::mean_pool_time(g, h_v2a, v_segs);
  return ops::l2_normalize_rows(g, ops::linear(g, pooled, p.proj_w, p.proj_b), 1e-8);
}

template <class T>
ForwardResult<T> forward(Graph<T>& g, const ModelParams<T>& p, const ModelConfig& cfg, const BatchInput<T>& batch,
                         const ForwardContext& ctx) {
  if (batch.visual_segs.size() != batch.audio_segs.size()) throw ShapeError("forward: visual/audio batch sizes differ");
  ForwardResult<T> r;
  r.f_v = visual_tcn(g, batch.visual, p, cfg, ctx, batch.visual_segs);
  r.f_a = audio_adapter(g, batch.audio, p, cfg, ctx, batch.audio_segs);
  std::tie(r.fused.h_v2a, r.fused.h_a2v) = fuse(g, r.f_v, r.f_a, p, cfg, ctx, batch.visual_segs, batch.audio_segs);
  std::tie(r.fused.z, r.logits) =
      pool_concat_classify(g, r.fused.h_v2a, r.fused.h_a2v, p, cfg, ctx, batch.visual_segs, batch.audio_segs);
  r.fused.v = project_visual(g, r.fused.h_v2a, p, batch.visual_segs);
  return r;
}

ModelState make_model(const ModelConfig& cfg, uint64_t seed, double tau) {
  return ModelState{cfg, init_params<float>(cfg, seed), tau};
}

namespace {
constexpr char kCheckpointMagic[4] = {'M', 'M', 'C', 'K'};

void put_u16(std::ostream& os, uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  os.write(b, 2);
}
void put_u32(std::ostream& os, uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>(v >> 24)};
  os.write(b, 4);
}
uint32_t get_le(const unsigned char* p, int n) {
  uint32_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}
}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path, const json& meta) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(FormatErrorKind::kIo, "cannot write checkpoint " + path.string());
  const std::string header = json{{"model", to_json(state.config)}, {"tau", state.tau}, {"meta", meta}}.dump();
  os.write(kCheckpointMagic, 4);
  put_u16(os, kCheckpointVersion);
  put_u32(os, static_cast<uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : state.params.named()) {
    std::vector<uint32_t> dims(t.shape().begin(), t.shape().end());
    encode_tensor(os, dims, t.data());
  }
  if (!os) throw FormatError(FormatErrorKind::kIo, "failed writing checkpoint " + path.string());
}

std::pair<ModelState, json> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatErrorKind::kIo, "cannot open checkpoint " + path.string());
  unsigned char head[10];
  is.read(reinterpret_cast<char*>(head), 10);
  if (is.gcount() != 10) throw FormatError(FormatErrorKind::kTruncated, path.string() + ": truncated checkpoint header");
  if (std::memcmp(head, kCheckpointMagic, 4) != 0) {
    throw FormatError(FormatErrorKind::kBadMagic, path.string() + ": bad magic (expected MMCK)");
  }
  if (get_le(head + 4, 2) != kCheckpointVersion) {
    throw FormatError(FormatErrorKind::kVersionMismatch, path.string() + ": unsupported checkpoint version");
  }
  const uint32_t len = get_le(head + 6, 4);
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (static_cast<uint32_t>(is.gcount()) != len) {
    throw FormatError(FormatErrorKind::kTruncated, path.string() + ": truncated checkpoint config");
  }
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(FormatErrorKind::kBadHeader, path.string() + ": config is not JSON: " + e.what());
  }
  ModelState state;
  state.config = model_config_from_json(header.at("model"));
  state.tau = header.value("tau", 0.07);
  state.params = allocate_params<float>(state.config);
  for (auto& [name, t] : state.params.named()) {
    TensorBlob blob = decode_tensor(is, path.string() + " [" + name + "]");
    Shape shape(blob.dims.begin(), blob.dims.end());
    if (shape != t.shape()) {
      throw FormatError(FormatErrorKind::kBadHeader, path.string() + ": " + name + " has shape " +
                                                         shape_to_string(shape) + ", expected " +
                                                         shape_to_string(t.shape()));
    }
    std::copy(blob.values.begin(), blob.values.end(), t.data().begin());
  }
  return {std::move(state), header.value("meta", json::object())};
}

#define MMFER_INSTANTIATE_MODEL(T)                                                                                   \
  template struct ModelParams<T>;                                                                                    \
  template ModelParams<T> allocate_params<T>(const ModelConfig&);                                                    \
  template ModelParams<T> init_params<T>(const ModelConfig&, uint64_t);                                              \
  template ModelParams<T> clone_params<T>(const ModelConfig&, const ModelParams<T>&);                                \
  template BatchInput<T> make_batch<T>(const std::vector<const WindowSample*>&, const std::vector<uint64_t>&);       \
  template Tensor<T> visual_tcn(Graph<T>&, const Tensor<T>&, const ModelParams<T>&, const ModelConfig&,              \
                                const ForwardContext&, const Segments&);                                             \
  template Tensor<T> audio_adapter(Graph<T>&, const Tensor<T>&, const ModelParams<T>&, const ModelConfig&,           \
                                   const ForwardContext&, const Segments&);                                          \
  template Tensor<T> multi_head_attention(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionParams<T>&,  \
                                          int, const Segments&, const Segments&, std::vector<T>*);                   \
  template Tensor<T> cross_attention_block(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionParams<T>&, \
                                           const ModelConfig&, const ForwardContext&, uint32_t, const Segments&,     \
                                           const Segments&, std::vector<T>*);                                        \
  template std::pair<Tensor<T>, Tensor<T>> fuse(Graph<T>&, const Tensor<T>&, const Tensor<T>&,                       \
                                                const ModelParams<T>&, const ModelConfig&, const ForwardContext&,    \
                                                const Segments&, const Segments&);                                   \
  template std::pair<Tensor<T>, Tensor<T>> pool_concat_classify(Graph<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                                                const ModelParams<T>&, const ModelConfig&,           \
                                                                const ForwardContext&, const Segments&,              \
                                                                const Segments&);                                    \
  template Tensor<T> project_visual(Graph<T>&, const Tensor<T>&, const ModelParams<T>&, const Segments&);            \
  template ForwardResult<T> forward(Graph<T>&, const ModelParams<T>&, const ModelConfig&, const BatchInput<T>&,      \
                                    const ForwardContext&);

MMFER_INSTANTIATE_MODEL(float)
MMFER_INSTANTIATE_MODEL(double)
#undef MMFER_INSTANTIATE_MODEL

template ModelParams<double> cast_params<double, float>(const ModelConfig&, const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelConfig&, const ModelParams<double>&);

}  // namespace mmfer
