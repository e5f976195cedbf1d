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
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmfer/dataset.hpp"
#include "mmfer/tensor.hpp"

namespace mmfer {

inline constexpr double kDefaultLambda = 0.1;
inline constexpr double kDefaultTau = 0.07;
// Official challenge baseline (macro F1) the window table is read against.
inline constexpr double kChallengeBaselineMacroF1 = 0.25;

// Class prompts and their embeddings; row j of `normalized` is t_j.
struct TextBank {
  std::vector<std::string> prompts;
  FeatureSequence embeddings;  // 8×512, as produced by the text encoder
  Tensor<float> normalized;    // 8×512 unit rows

  template <class T>
  Tensor<T> as() const {
    return normalized.cast<T>();
  }
};

// "A face expressing <emotion>" for each class name, lower-cased.
std::vector<std::string> make_prompts(std::span<const std::string_view> class_names);
TextBank make_text_bank(const FeatureSequence& embeddings);
TextBank load_text_bank(const std::filesystem::path& path);

// Σ_i w_{y_i}·(−log softmax(logits_i)[y_i]) / normalizer. With normalizer ≤ 0
// the batch weight sum Σ_i w_{y_i} is used (weighted mean); an explicit
// normalizer lets micro-batches share the full batch's denominator.
template <class T>
Tensor<T> weighted_cross_entropy(Graph<T>& g, const Tensor<T>& logits, const std::vector<int>& labels,
                                 std::span<const double> weights, double normalizer = 0.0);

// Symmetric InfoNCE between unit rows v_i and their class texts t_{y_i}:
// S_ij = v_i·t_{y_j}/tau, loss = ½(row CE + column CE) with the diagonal as
// positives and same-label off-diagonal pairs removed from both softmax
// denominators.
template <class T>
Tensor<T> contrastive_loss(Graph<T>& g, const Tensor<T>& v, const std::vector<int>& labels, const Tensor<T>& text,
                           double tau);

struct LossReport {
  double l_cls = 0.0;
  double l_con = 0.0;
  double l_total = 0.0;
  double lambda = kDefaultLambda;
};

template <class T>
struct CombinedLoss {
  Tensor<T> total;
  Tensor<T> cls;
  Tensor<T> con;
  LossReport report() const;
  double lambda = kDefaultLambda;
};

// L = L_cls + lambda·L_con.
template <class T>
CombinedLoss<T> combined_loss(Graph<T>& g, const Tensor<T>& logits, const std::vector<int>& labels,
                              const Tensor<T>& v, const Tensor<T>& text, std::span<const double> weights,
                              double lambda = kDefaultLambda, double tau = kDefaultTau);

struct MetricsReport {
  std::array<double, kNumClasses> per_class_f1{};
  double macro_f1 = 0.0;
  std::array<std::array<int64_t, kNumClasses>, kNumClasses> confusion{};  // [truth][prediction]
};

// Per class F1 = 2TP/(2TP+FP+FN) (0 when the denominator is 0), averaged
// unweighted over all 8 classes.
MetricsReport macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels);
nlohmann::json to_json(const MetricsReport& m);
std::string format_metrics_table(const MetricsReport& m);

template <class T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

}  // namespace mmfer
