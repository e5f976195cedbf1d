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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mmfer/feature_io.hpp"

namespace mmfer {

inline constexpr int kNumClasses = 8;
// ABAW-8 expression classes, in label order.
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Neutral", "Anger", "Disgust", "Fear", "Happiness", "Sadness", "Surprise", "Other"};
inline constexpr std::array<int, 4> kWindowSizes = {10, 15, 30, 60};

bool is_supported_window(int window);

// One training/evaluation unit: a window of visual frames, the audio aligned
// to the same wall-clock span, and the window's label.
struct WindowSample {
  std::string sample_id;
  FeatureSequence visual;
  FeatureSequence audio;
  int label = 0;
  std::string source_clip;
  int64_t frame_start = 0;
  int64_t frame_end = 0;
};

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::string sample_id;
  int label = 0;
  std::string visual_path;  // relative to the manifest file
  std::string audio_path;
  int64_t t_v = 0;
  int64_t t_a = 0;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestEntry> samples;
  Split split = Split::kTrain;
  // Directory the relative paths resolve against; not serialized.
  std::filesystem::path base_dir;
};

// Parses a manifest and checks every referenced file exists with the declared
// (T, D) header. Throws DataError / FormatError / LabelError.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
std::vector<WindowSample> load_samples(const DatasetManifest& manifest);

struct WindowingOptions {
  int window = 30;
  int stride = 30;
  double fps = 30.0;
  double audio_rate = 50.0;  // audio feature rows per second
};

// Cuts a clip into fixed windows starting at 0, stride, 2·stride, …; a
// trailing partial window is dropped. Each window's audio slice spans
// [floor(start/fps·rate), floor(end/fps·rate)). The window label is the
// majority per-frame label, ties going to the lowest class id.
std::vector<WindowSample> extract_windows(const FeatureSequence& clip_visual, const FeatureSequence& clip_audio,
                                          const std::vector<int>& frame_labels, const WindowingOptions& options,
                                          const std::string& clip_id = "clip");

struct ClassStats {
  std::array<int64_t, kNumClasses> counts{};
  std::array<double, kNumClasses> weights{};
  int64_t total = 0;
};

// Inverse-frequency weights w_c = N / (8·n_c). Throws MissingClassError if a
// class has no samples.
ClassStats compute_class_stats(const std::vector<int>& labels);
ClassStats compute_class_stats(const DatasetManifest& manifest);

struct SyntheticOptions {
  int per_class = 40;
  int window = 10;
  int audio_frames = 0;     // 0: derived from window, fps and audio_rate
  int eval_per_class = 0;   // 0: per_class / 2 (at least 1)
  double separation = 4.0;
  uint64_t seed = 42;
  double fps = 30.0;
  double audio_rate = 50.0;
};

struct DatasetSplits {
  std::vector<WindowSample> train;
  std::vector<WindowSample> val;
  std::vector<WindowSample> test;
  FeatureSequence text_bank;  // 8×512 unit rows
};

// Visual frames ~ N(μᵛ_c, 0.25·I) and audio rows ~ N(μᵃ_c, 0.25·I), with μ_c
// seeded random unit directions scaled by `separation`. Pure function of
// (options, seed).
DatasetSplits generate_synthetic(const SyntheticOptions& options);

// Writes train/val/test manifests, feature files and text_bank.mmfe under
// `dir`, creating it if needed.
void write_dataset(const DatasetSplits& data, const std::filesystem::path& dir);
// Reads a directory laid out by write_dataset; test.json is optional.
DatasetSplits load_dataset(const std::filesystem::path& dir);

inline constexpr const char* kTextBankFile = "text_bank.mmfe";

}  // namespace mmfer
