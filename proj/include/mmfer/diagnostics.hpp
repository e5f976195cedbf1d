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
#include <string>
#include <vector>

#include "mmfer/grad_check.hpp"
#include "mmfer/model.hpp"

namespace mmfer {

struct LayerGradCheck {
  std::string layer;
  GradCheckResult result;
  double seconds = 0.0;
};

// Reduced architecture for finite-difference checks: d_model 16, two heads,
// two TCN blocks, narrow MLP and text width.
ModelConfig gradcheck_config();

// Finite-difference checks, in 64-bit mode, of every parameterized layer
// (visual TCN, audio adapter, both attention directions, classifier MLP,
// projection) plus the class loss, the contrastive loss and the full forward
// pass through the combined objective. Inputs are a seeded two-sample batch
// with T_v = 4 and T_a = 6; training-mode dropout is active.
std::vector<LayerGradCheck> run_layer_grad_checks(uint64_t seed = 42);

std::string format_grad_check_table(const std::vector<LayerGradCheck>& rows, double tolerance);

}  // namespace mmfer
