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

#include "mmfer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include "json.hpp"

#include "mmfer/errors.hpp"
#include "mmfer/rng.hpp"

namespace mmfer {

namespace fs = std::filesystem;
using nlohmann::json;

bool is_supported_window(int window) {
  return std::find(kWindowSizes.begin(), kWindowSizes.end(), window) != kWindowSizes.end();
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(name) + "'");
}

namespace {

void check_label(int label, const std::string& where) {
  if (label < 0 || label >= kNumClasses) {
    throw LabelError(where + ": label " + std::to_string(label) + " outside 0-" + std::to_string(kNumClasses - 1));
  }
}

template <class V>
V required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw DataError(where + ": field '" + key + "': " + e.what());
  }
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  const std::string where = path.string();
  DatasetManifest m;
  m.base_dir = path.parent_path();
  m.classes = required<std::vector<std::string>>(j, "classes", where);
  if (m.classes.size() != kNumClasses) {
    throw DataError(where + ": expected " + std::to_string(kNumClasses) + " classes, got " +
                    std::to_string(m.classes.size()));
  }
  m.split = parse_split(required<std::string>(j, "split", where));
  if (!j.contains("samples") || !j["samples"].is_array()) throw DataError(where + ": 'samples' must be an array");
  for (const auto& s : j["samples"]) {
    ManifestEntry e;
    e.sample_id = required<std::string>(s, "sample_id", where);
    const std::string at = where + " sample " + e.sample_id;
    e.label = required<int>(s, "label", at);
    check_label(e.label, at);
    e.visual_path = required<std::string>(s, "visual_path", at);
    e.audio_path = required<std::string>(s, "audio_path", at);
    e.t_v = required<int64_t>(s, "T_v", at);
    e.t_a = required<int64_t>(s, "T_a", at);
    for (const auto& [rel, t, d] : {std::tuple{e.visual_path, e.t_v, kVisualDim}, std::tuple{e.audio_path, e.t_a, kAudioDim}}) {
      const fs::path file = m.base_dir / rel;
      if (!fs::exists(file)) throw DataError(at + ": missing file " + file.string());
      const auto [ft, fd] = read_feature_header(file);
      if (ft != t || fd != d) {
        throw DataError(at + ": " + file.string() + " header is (" + std::to_string(ft) + ", " + std::to_string(fd) +
                        "), manifest declares (" + std::to_string(t) + ", " + std::to_string(d) + ")");
      }
    }
    m.samples.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  json j;
  j["classes"] = manifest.classes;
  j["split"] = split_name(manifest.split);
  j["samples"] = json::array();
  for (const auto& e : manifest.samples) {
    j["samples"].push_back({{"sample_id", e.sample_id},
                            {"label", e.label},
                            {"visual_path", e.visual_path},
                            {"audio_path", e.audio_path},
                            {"T_v", e.t_v},
                            {"T_a", e.t_a}});
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  os << j.dump(2) << '\n';
}

std::vector<WindowSample> load_samples(const DatasetManifest& manifest) {
  std::vector<WindowSample> out;
  out.reserve(manifest.samples.size());
  for (const auto& e : manifest.samples) {
    WindowSample s;
    s.sample_id = e.sample_id;
    s.label = e.label;
    s.visual = read_feature_file(manifest.base_dir / e.visual_path, Modality::kVisual);
    s.audio = read_feature_file(manifest.base_dir / e.audio_path, Modality::kAudio);
    s.source_clip = e.sample_id;
    s.frame_start = 0;
    s.frame_end = s.visual.frames;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<WindowSample> extract_windows(const FeatureSequence& clip_visual, const FeatureSequence& clip_audio,
                                          const std::vector<int>& frame_labels, const WindowingOptions& options,
                                          const std::string& clip_id) {
  if (options.stride <= 0) throw ParameterError("window stride must be positive");
  if (!is_supported_window(options.window)) {
    throw ParameterError("window must be one of 10, 15, 30, 60; got " + std::to_string(options.window));
  }
  if (!(options.fps > 0) || !(options.audio_rate > 0)) throw ParameterError("fps and audio_rate must be positive");
  if (static_cast<int64_t>(frame_labels.size()) != clip_visual.frames) {
    throw DataError(clip_id + ": " + std::to_string(frame_labels.size()) + " frame labels for " +
                    std::to_string(clip_visual.frames) + " frames");
  }
  for (int l : frame_labels) check_label(l, clip_id);

  std::vector<WindowSample> out;
  for (int64_t start = 0; start + options.window <= clip_visual.frames; start += options.stride) {
    const int64_t end = start + options.window;
    const auto a0 = static_cast<int64_t>(std::floor(static_cast<double>(start) / options.fps * options.audio_rate));
    const auto a1 = std::min<int64_t>(
        clip_audio.frames,
        static_cast<int64_t>(std::floor(static_cast<double>(end) / options.fps * options.audio_rate)));
    if (a1 <= a0) {
      throw DataError(clip_id + ": audio track too short for frames [" + std::to_string(start) + ", " +
                      std::to_string(end) + ")");
    }

    std::array<int, kNumClasses> votes{};
    for (int64_t t = start; t < end; ++t) ++votes[static_cast<size_t>(frame_labels[static_cast<size_t>(t)])];
    // max_element returns the first maximum: lowest id wins ties.
    const int label = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());

    WindowSample w;
    w.sample_id = clip_id + "_" + std::to_string(start);
    w.source_clip = clip_id;
    w.frame_start = start;
    w.frame_end = end;
    w.label = label;
    w.visual.modality = clip_visual.modality;
    w.visual.frames = options.window;
    w.visual.dim = clip_visual.dim;
    w.visual.values.assign(clip_visual.row(start), clip_visual.row(start) + options.window * clip_visual.dim);
    w.audio.modality = clip_audio.modality;
    w.audio.frames = a1 - a0;
    w.audio.dim = clip_audio.dim;
    w.audio.values.assign(clip_audio.row(a0), clip_audio.row(a0) + (a1 - a0) * clip_audio.dim);
    out.push_back(std::move(w));
  }
  return out;
}

ClassStats compute_class_stats(const std::vector<int>& labels) {
  ClassStats st;
  for (int l : labels) {
    check_label(l, "class stats");
    ++st.counts[static_cast<size_t>(l)];
  }
  st.total = static_cast<int64_t>(labels.size());
  for (int c = 0; c < kNumClasses; ++c) {
    if (st.counts[c] == 0) {
      throw MissingClassError("class " + std::to_string(c) + " (" + std::string(kClassNames[c]) +
                              ") has no training samples");
    }
    st.weights[c] = static_cast<double>(st.total) / (kNumClasses * static_cast<double>(st.counts[c]));
  }
  return st;
}

ClassStats compute_class_stats(const DatasetManifest& manifest) {
  std::vector<int> labels;
  labels.reserve(manifest.samples.size());
  for (const auto& e : manifest.samples) labels.push_back(e.label);
  return compute_class_stats(labels);
}

namespace {

std::vector<double> random_unit(SeededStream& rng, int64_t dim) {
  std::vector<double> v(static_cast<size_t>(dim));
  double norm = 0;
  do {
    norm = 0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
  } while (norm < 1e-6);
  for (auto& x : v) x /= norm;
  return v;
}

FeatureSequence sample_around(SeededStream& rng, Modality m, int64_t frames, const std::vector<double>& mean) {
  constexpr double kStd = 0.5;  // variance 0.25
  FeatureSequence s;
  s.modality = m;
  s.frames = frames;
  s.dim = static_cast<int64_t>(mean.size());
  s.values.resize(static_cast<size_t>(frames * s.dim));
  for (int64_t t = 0; t < frames; ++t) {
    for (int64_t d = 0; d < s.dim; ++d) {
      s.values[static_cast<size_t>(t * s.dim + d)] = static_cast<float>(mean[static_cast<size_t>(d)] + kStd * rng.normal());
    }
  }
  return s;
}

}  // namespace

DatasetSplits generate_synthetic(const SyntheticOptions& options) {
  if (!(options.separation >= 0)) throw ParameterError("separation must be non-negative");
  if (options.per_class < 1) throw ParameterError("per_class must be at least 1");
  if (options.window < 1) throw ParameterError("window must be positive");
  const int64_t audio_frames =
      options.audio_frames > 0
          ? options.audio_frames
          : std::max<int64_t>(1, static_cast<int64_t>(std::floor(options.window / options.fps * options.audio_rate)));
  const int eval_per_class = options.eval_per_class > 0 ? options.eval_per_class : std::max(1, options.per_class / 2);

  SeededStream rng(options.seed);
  DatasetSplits data;

  // Text bank: unit rows with pairwise cosine below 0.3.
  std::vector<std::vector<double>> text;
  while (text.size() < kNumClasses) {
    auto cand = random_unit(rng, kTextDim);
    bool ok = true;
    for (const auto& t : text) {
      double dot = 0;
      for (int64_t d = 0; d < kTextDim; ++d) dot += cand[d] * t[d];
      ok = ok && dot < 0.3;
    }
    if (ok) text.push_back(std::move(cand));
  }
  data.text_bank.modality = Modality::kText;
  data.text_bank.frames = kNumClasses;
  data.text_bank.dim = kTextDim;
  for (const auto& t : text) {
    for (double x : t) data.text_bank.values.push_back(static_cast<float>(x));
  }

  std::vector<std::vector<double>> mean_v, mean_a;
  for (int c = 0; c < kNumClasses; ++c) {
    auto u = random_unit(rng, kVisualDim);
    for (auto& x : u) x *= options.separation;
    mean_v.push_back(std::move(u));
  }
  for (int c = 0; c < kNumClasses; ++c) {
    auto u = random_unit(rng, kAudioDim);
    for (auto& x : u) x *= options.separation;
    mean_a.push_back(std::move(u));
  }

  auto make_split = [&](Split split, int n_per_class) {
    std::vector<WindowSample> out;
    int64_t idx = 0;
    for (int i = 0; i < n_per_class; ++i) {
      for (int c = 0; c < kNumClasses; ++c, ++idx) {
        WindowSample s;
        char id[32];
        std::snprintf(id, sizeof(id), "%s_%05lld", split_name(split), static_cast<long long>(idx));
        s.sample_id = id;
        s.source_clip = id;
        s.label = c;
        s.visual = sample_around(rng, Modality::kVisual, options.window, mean_v[c]);
        s.audio = sample_around(rng, Modality::kAudio, audio_frames, mean_a[c]);
        s.frame_start = 0;
        s.frame_end = options.window;
        out.push_back(std::move(s));
      }
    }
    return out;
  };
  data.train = make_split(Split::kTrain, options.per_class);
  data.val = make_split(Split::kVal, eval_per_class);
  data.test = make_split(Split::kTest, eval_per_class);
  return data;
}

void write_dataset(const DatasetSplits& data, const fs::path& dir) {
  fs::create_directories(dir / "features");
  write_feature_file(data.text_bank, dir / kTextBankFile);
  auto dump = [&](Split split, const std::vector<WindowSample>& samples) {
    DatasetManifest m;
    m.split = split;
    for (auto name : kClassNames) m.classes.emplace_back(name);
    for (const auto& s : samples) {
      ManifestEntry e;
      e.sample_id = s.sample_id;
      e.label = s.label;
      e.visual_path = "features/" + s.sample_id + ".visual.mmfe";
      e.audio_path = "features/" + s.sample_id + ".audio.mmfe";
      e.t_v = s.visual.frames;
      e.t_a = s.audio.frames;
      write_feature_file(s.visual, dir / e.visual_path);
      write_feature_file(s.audio, dir / e.audio_path);
      m.samples.push_back(std::move(e));
    }
    save_manifest(m, dir / (std::string(split_name(split)) + ".json"));
  };
  dump(Split::kTrain, data.train);
  dump(Split::kVal, data.val);
  dump(Split::kTest, data.test);
}

DatasetSplits load_dataset(const fs::path& dir) {
  DatasetSplits data;
  const auto train = load_manifest(dir / "train.json");
  compute_class_stats(train);
  data.train = load_samples(train);
  data.val = load_samples(load_manifest(dir / "val.json"));
  if (fs::exists(dir / "test.json")) data.test = load_samples(load_manifest(dir / "test.json"));
  data.text_bank = read_feature_file(dir / kTextBankFile, Modality::kText);
  if (data.text_bank.frames != kNumClasses) {
    throw DataError(std::string(kTextBankFile) + " must have " + std::to_string(kNumClasses) + " rows");
  }
  return data;
}

}  // namespace mmfer
