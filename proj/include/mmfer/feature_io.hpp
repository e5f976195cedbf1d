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
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmfer {

// Feature binary layout (little-endian):
//   "MMFE" | u16 version = 1 | u8 dtype = 0 (f32) | u8 ndim | 8 reserved bytes
//   | ndim × u32 dims | f32 payload, row-major
// Feature files always have ndim = 2 (T, D); checkpoint blobs reuse the same
// encoding with other ranks.
inline constexpr char kFeatureMagic[4] = {'M', 'M', 'F', 'E'};
inline constexpr uint16_t kFeatureVersion = 1;
inline constexpr uint8_t kDtypeF32 = 0;
inline constexpr size_t kFeatureHeaderBytes = 16;

enum class Modality { kVisual, kAudio, kText };

inline constexpr int64_t kVisualDim = 512;
inline constexpr int64_t kAudioDim = 768;
inline constexpr int64_t kTextDim = 512;

int64_t modality_dim(Modality m);
const char* modality_name(Modality m);

// A T×D matrix of one modality's frame or segment features.
struct FeatureSequence {
  Modality modality = Modality::kVisual;
  int64_t frames = 0;
  int64_t dim = 0;
  std::vector<float> values;

  const float* row(int64_t t) const { return values.data() + t * dim; }
  // Throws DataError when the dimension does not fit the modality, T < 1, or
  // a value is not finite.
  void validate() const;
};

struct TensorBlob {
  std::vector<uint32_t> dims;
  std::vector<float> values;
};

void encode_tensor(std::ostream& os, std::span<const uint32_t> dims, std::span<const float> values);
// `context` names the source in error messages.
TensorBlob decode_tensor(std::istream& is, const std::string& context);

void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path);
// Reads a (T, D) feature file. Without an explicit modality, D = 768 reads as
// audio and anything else as visual; with one, the dimension is validated.
FeatureSequence read_feature_file(const std::filesystem::path& path,
                                  std::optional<Modality> modality = std::nullopt);
// Header-only read: returns (T, D).
std::pair<int64_t, int64_t> read_feature_header(const std::filesystem::path& path);

}  // namespace mmfer
