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
#include <functional>
#include <string>
#include <vector>

#include "mmfer/tensor.hpp"

namespace mmfer {

struct GradCheckOptions {
  double step = 1e-4;
  // When the parameters hold more coordinates than this, a seeded random
  // subset of this size (never below 100) is checked instead of all of them.
  size_t max_coordinates = 600;
  uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t coordinates_checked = 0;
  // Parameter index and flat element of the worst coordinate.
  size_t worst_param = 0;
  int64_t worst_element = 0;
};

// Compares the reverse-mode gradient of the scalar `f` with central finite
// differences (f(θ+h) − f(θ−h)) / 2h. The relative error of a coordinate is
// |g_a − g_n| / max(1, |g_a|, |g_n|). `f` must read `params` through their
// shared handles; it is re-evaluated on a non-recording graph for each probe.
GradCheckResult grad_check(const std::function<Tensor<double>(Graph<double>&)>& f,
                           const std::vector<Tensor<double>>& params, const GradCheckOptions& options = {});

}  // namespace mmfer
