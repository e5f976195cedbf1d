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

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mmfer {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Stateless counter-based generator: every draw is a pure function of
// (seed, counter tuple). Dropout masks therefore do not depend on call order,
// batch composition, or how many other draws happened before.
class CounterRng {
 public:
  explicit CounterRng(uint64_t seed = 0) : seed_(seed) {}

  uint64_t seed() const noexcept { return seed_; }

  uint64_t bits(uint64_t a, uint64_t b, uint64_t c, uint64_t d) const {
    uint64_t h = splitmix64(seed_ ^ 0x6A09E667F3BCC908ULL);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ (b + 0x3C6EF372FE94F82BULL));
    h = splitmix64(h ^ (c + 0xA54FF53A5F1D36F1ULL));
    h = splitmix64(h ^ (d + 0x510E527FADE682D1ULL));
    return h;
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform(uint64_t a, uint64_t b, uint64_t c, uint64_t d) const {
    return static_cast<double>(bits(a, b, c, d) >> 11) * 0x1.0p-53;
  }

 private:
  uint64_t seed_;
};

// Sequential seeded stream for initialization, data synthesis and shuffling.
// Only the raw mt19937_64 bit sequence is used (it is fully specified by the
// standard); the conversions to uniform/normal are done here so results are
// identical across standard library implementations.
class SeededStream {
 public:
  explicit SeededStream(uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; caches the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  template <class V>
  void shuffle(std::vector<V>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<size_t>(below(i))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mmfer
