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

#include "mmfer/feature_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "mmfer/errors.hpp"

namespace mmfer {

int64_t modality_dim(Modality m) {
  switch (m) {
    case Modality::kVisual: return kVisualDim;
    case Modality::kAudio: return kAudioDim;
    case Modality::kText: return kTextDim;
  }
  return 0;
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kVisual: return "visual";
    case Modality::kAudio: return "audio";
    case Modality::kText: return "text";
  }
  return "?";
}

void FeatureSequence::validate() const {
  if (frames < 1) throw DataError(std::string(modality_name(modality)) + " sequence has no frames");
  if (dim != modality_dim(modality)) {
    throw DataError(std::string(modality_name(modality)) + " features must have D = " +
                    std::to_string(modality_dim(modality)) + ", got " + std::to_string(dim));
  }
  if (static_cast<int64_t>(values.size()) != frames * dim) throw DataError("feature payload size mismatch");
  for (float v : values) {
    if (!std::isfinite(v)) throw DataError(std::string(modality_name(modality)) + " features contain NaN/Inf");
  }
}

namespace {

template <class U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(const unsigned char* p) {
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return static_cast<U>(v);
}

void read_exact(std::istream& is, void* dst, size_t n, const std::string& context, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw FormatError(FormatErrorKind::kTruncated, context + ": truncated " + what);
  }
}

}  // namespace

void encode_tensor(std::ostream& os, std::span<const uint32_t> dims, std::span<const float> values) {
  uint64_t count = 1;
  for (uint32_t d : dims) count *= d;
  if (count != values.size()) throw ShapeError("encode_tensor: dims do not match payload size");
  if (dims.empty() || dims.size() > 255) throw ShapeError("encode_tensor: unsupported rank");
  os.write(kFeatureMagic, 4);
  put_le<uint16_t>(os, kFeatureVersion);
  put_le<uint8_t>(os, kDtypeF32);
  put_le<uint8_t>(os, static_cast<uint8_t>(dims.size()));
  for (int i = 0; i < 8; ++i) put_le<uint8_t>(os, 0);
  for (uint32_t d : dims) put_le<uint32_t>(os, d);
  std::vector<char> payload(values.size() * 4);
  for (size_t i = 0; i < values.size(); ++i) {
    const uint32_t bits = std::bit_cast<uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) payload[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

TensorBlob decode_tensor(std::istream& is, const std::string& context) {
  std::array<unsigned char, kFeatureHeaderBytes> header{};
  read_exact(is, header.data(), header.size(), context, "header");
  if (std::memcmp(header.data(), kFeatureMagic, 4) != 0) {
    throw FormatError(FormatErrorKind::kBadMagic, context + ": bad magic (expected MMFE)");
  }
  const auto version = get_le<uint16_t>(header.data() + 4);
  if (version != kFeatureVersion) {
    throw FormatError(FormatErrorKind::kVersionMismatch,
                      context + ": unsupported version " + std::to_string(version));
  }
  const auto dtype = header[6];
  if (dtype != kDtypeF32) {
    throw FormatError(FormatErrorKind::kUnsupportedDtype, context + ": dtype " + std::to_string(dtype) + " is not f32");
  }
  const auto ndim = header[7];
  if (ndim == 0) throw FormatError(FormatErrorKind::kBadHeader, context + ": rank 0 tensor");
  TensorBlob blob;
  std::vector<unsigned char> dims_raw(ndim * 4u);
  read_exact(is, dims_raw.data(), dims_raw.size(), context, "dims");
  uint64_t count = 1;
  for (size_t i = 0; i < ndim; ++i) {
    const auto d = get_le<uint32_t>(dims_raw.data() + 4 * i);
    if (d == 0) throw FormatError(FormatErrorKind::kBadHeader, context + ": zero-sized dimension");
    blob.dims.push_back(d);
    count *= d;
  }
  std::vector<unsigned char> payload(count * 4);
  read_exact(is, payload.data(), payload.size(), context, "payload");
  blob.values.resize(count);
  for (size_t i = 0; i < count; ++i) blob.values[i] = std::bit_cast<float>(get_le<uint32_t>(payload.data() + 4 * i));
  return blob;
}

void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path) {
  if (seq.frames < 1 || seq.dim < 1 || static_cast<int64_t>(seq.values.size()) != seq.frames * seq.dim) {
    throw ShapeError("write_feature_file: inconsistent sequence shape");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError(FormatErrorKind::kIo, "cannot open " + path.string() + " for writing");
  const std::array<uint32_t, 2> dims{static_cast<uint32_t>(seq.frames), static_cast<uint32_t>(seq.dim)};
  encode_tensor(os, dims, seq.values);
  if (!os) throw FormatError(FormatErrorKind::kIo, "failed writing " + path.string());
}

FeatureSequence read_feature_file(const std::filesystem::path& path, std::optional<Modality> modality) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatErrorKind::kIo, "cannot open " + path.string());
  TensorBlob blob = decode_tensor(is, path.string());
  if (blob.dims.size() != 2) {
    throw FormatError(FormatErrorKind::kBadHeader, path.string() + ": feature files must have 2 dims");
  }
  FeatureSequence seq;
  seq.frames = blob.dims[0];
  seq.dim = blob.dims[1];
  seq.values = std::move(blob.values);
  if (modality) {
    seq.modality = *modality;
    seq.validate();
  } else {
    seq.modality = seq.dim == kAudioDim ? Modality::kAudio : Modality::kVisual;
  }
  return seq;
}

std::pair<int64_t, int64_t> read_feature_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatErrorKind::kIo, "cannot open " + path.string());
  std::array<unsigned char, kFeatureHeaderBytes + 8> header{};
  read_exact(is, header.data(), header.size(), path.string(), "header");
  if (std::memcmp(header.data(), kFeatureMagic, 4) != 0) {
    throw FormatError(FormatErrorKind::kBadMagic, path.string() + ": bad magic (expected MMFE)");
  }
  if (get_le<uint16_t>(header.data() + 4) != kFeatureVersion) {
    throw FormatError(FormatErrorKind::kVersionMismatch, path.string() + ": unsupported version");
  }
  if (header[6] != kDtypeF32) throw FormatError(FormatErrorKind::kUnsupportedDtype, path.string() + ": not f32");
  if (header[7] != 2) throw FormatError(FormatErrorKind::kBadHeader, path.string() + ": feature files must have 2 dims");
  const int64_t t = get_le<uint32_t>(header.data() + 16);
  const int64_t d = get_le<uint32_t>(header.data() + 20);
  const auto expected = static_cast<std::uintmax_t>(kFeatureHeaderBytes + 8 + 4 * t * d);
  if (std::filesystem::file_size(path) < expected) {
    throw FormatError(FormatErrorKind::kTruncated, path.string() + ": payload shorter than header claims");
  }
  return {t, d};
}

}  // namespace mmfer
