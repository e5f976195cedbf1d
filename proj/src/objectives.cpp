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

#include "mmfer/objectives.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mmfer/errors.hpp"
#include "mmfer/ops.hpp"

namespace mmfer {

using nlohmann::json;

std::vector<std::string> make_prompts(std::span<const std::string_view> class_names) {
  std::vector<std::string> out;
  for (auto name : class_names) {
    std::string emotion(name);
    std::transform(emotion.begin(), emotion.end(), emotion.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back("A face expressing " + emotion);
  }
  return out;
}

TextBank make_text_bank(const FeatureSequence& embeddings) {
  if (embeddings.frames != kNumClasses) {
    throw DataError("text bank must have " + std::to_string(kNumClasses) + " rows, got " +
                    std::to_string(embeddings.frames));
  }
  // The width is left free so reduced test configs can use narrow banks;
  // text-bank files are still checked for D = 512 when read.
  FeatureSequence e = embeddings;
  e.modality = Modality::kText;
  if (e.dim < 1 || static_cast<int64_t>(e.values.size()) != e.frames * e.dim) {
    throw DataError("text bank payload does not match its shape");
  }
  for (float v : e.values) {
    if (!std::isfinite(v)) throw DataError("text bank contains NaN/Inf");
  }
  TextBank bank;
  bank.prompts = make_prompts(kClassNames);
  bank.embeddings = e;
  Graph<float> g(false);
  Tensor<float> raw({e.frames, e.dim}, e.values);
  bank.normalized = ops::l2_normalize_rows(g, raw, 1e-8);
  return bank;
}

TextBank load_text_bank(const std::filesystem::path& path) {
  return make_text_bank(read_feature_file(path, Modality::kText));
}

namespace {

void check_labels(const std::vector<int>& labels, int64_t n_classes) {
  for (int l : labels) {
    if (l < 0 || l >= n_classes) {
      throw LabelError("label " + std::to_string(l) + " outside 0-" + std::to_string(n_classes - 1));
    }
  }
}

}  // namespace

template <class T>
Tensor<T> weighted_cross_entropy(Graph<T>& g, const Tensor<T>& logits, const std::vector<int>& labels,
                                 std::span<const double> weights, double normalizer) {
  if (logits.ndim() != 2) throw ShapeError("weighted_cross_entropy expects B x C logits");
  const int64_t b = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != b) throw ShapeError("weighted_cross_entropy: one label per row required");
  if (static_cast<int64_t>(weights.size()) != c) throw ShapeError("weighted_cross_entropy: one weight per class required");
  check_labels(labels, c);
  for (double w : weights) {
    if (!(w > 0)) throw ParameterError("class weights must be positive");
  }
  double denom = normalizer;
  if (denom <= 0) {
    denom = 0;
    for (int y : labels) denom += weights[static_cast<size_t>(y)];
  }

  std::vector<T> probs(static_cast<size_t>(b * c));
  T total = 0;
  for (int64_t i = 0; i < b; ++i) {
    const T* row = logits.ptr() + i * c;
    const T mx = *std::max_element(row, row + c);
    T sum = 0;
    for (int64_t j = 0; j < c; ++j) {
      probs[static_cast<size_t>(i * c + j)] = std::exp(row[j] - mx);
      sum += probs[static_cast<size_t>(i * c + j)];
    }
    for (int64_t j = 0; j < c; ++j) probs[static_cast<size_t>(i * c + j)] /= sum;
    const int y = labels[static_cast<size_t>(i)];
    const T nll = mx + std::log(sum) - row[y];
    total += static_cast<T>(weights[static_cast<size_t>(y)]) * nll;
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(denom));
  if (g.wants_grad({&logits})) {
    std::vector<double> w(weights.begin(), weights.end());
    g.record("weighted_cross_entropy", {logits}, out,
             [logits, out, labels, w = std::move(w), probs = std::move(probs), b, c, denom]() mutable {
               const T dy = out.grad()[0];
               auto dx = logits.grad();
               for (int64_t i = 0; i < b; ++i) {
                 const int y = labels[static_cast<size_t>(i)];
                 const T scale = dy * static_cast<T>(w[static_cast<size_t>(y)] / denom);
                 for (int64_t j = 0; j < c; ++j) {
                   const T target = j == y ? T(1) : T(0);
                   dx[i * c + j] += scale * (probs[static_cast<size_t>(i * c + j)] - target);
                 }
               }
             });
  }
  return out;
}

template <class T>
Tensor<T> contrastive_loss(Graph<T>& g, const Tensor<T>& v, const std::vector<int>& labels, const Tensor<T>& text,
                           double tau) {
  if (!(tau > 0)) throw ParameterError("contrastive temperature must be positive");
  if (v.ndim() != 2 || text.ndim() != 2 || v.dim(1) != text.dim(1)) {
    throw ShapeError("contrastive_loss: v " + shape_to_string(v.shape()) + " vs text " + shape_to_string(text.shape()));
  }
  const int64_t b = v.dim(0), d = v.dim(1);
  if (static_cast<int64_t>(labels.size()) != b) throw ShapeError("contrastive_loss: one label per row required");
  check_labels(labels, text.dim(0));
  for (int64_t i = 0; i < b; ++i) {
    T ss = 0;
    for (int64_t k = 0; k < d; ++k) ss += v.at(i, k) * v.at(i, k);
    if (std::abs(std::sqrt(static_cast<double>(ss)) - 1.0) > 1e-4) {
      throw ContractError("contrastive_loss: row " + std::to_string(i) + " of v is not unit-norm");
    }
  }

  const T inv_tau = static_cast<T>(1.0 / tau);
  auto masked = [&labels](int64_t i, int64_t j) { return i != j && labels[i] == labels[j]; };
  std::vector<T> s(static_cast<size_t>(b * b));
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t j = 0; j < b; ++j) {
      const T* tj = text.ptr() + static_cast<int64_t>(labels[static_cast<size_t>(j)]) * d;
      T dot = 0;
      for (int64_t k = 0; k < d; ++k) dot += v.at(i, k) * tj[k];
      s[static_cast<size_t>(i * b + j)] = dot * inv_tau;
    }
  }
  // Row-wise and column-wise softmax over unmasked entries.
  std::vector<T> pr(s.size(), T(0)), pc(s.size(), T(0));
  T row_loss = 0, col_loss = 0;
  for (int64_t i = 0; i < b; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t j = 0; j < b; ++j) {
      if (!masked(i, j)) mx = std::max(mx, s[i * b + j]);
    }
    T sum = 0;
    for (int64_t j = 0; j < b; ++j) {
      if (!masked(i, j)) sum += (pr[i * b + j] = std::exp(s[i * b + j] - mx));
    }
    for (int64_t j = 0; j < b; ++j) pr[i * b + j] /= sum;
    row_loss += mx + std::log(sum) - s[i * b + i];
  }
  for (int64_t j = 0; j < b; ++j) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t i = 0; i < b; ++i) {
      if (!masked(i, j)) mx = std::max(mx, s[i * b + j]);
    }
    T sum = 0;
    for (int64_t i = 0; i < b; ++i) {
      if (!masked(i, j)) sum += (pc[i * b + j] = std::exp(s[i * b + j] - mx));
    }
    for (int64_t i = 0; i < b; ++i) pc[i * b + j] /= sum;
    col_loss += mx + std::log(sum) - s[j * b + j];
  }
  Tensor<T> out = Tensor<T>::scalar(T(0.5) * (row_loss + col_loss) / static_cast<T>(b));

  if (g.wants_grad({&v, &text})) {
    g.record("contrastive_loss", {v, text}, out,
             [v, text, out, labels, pr = std::move(pr), pc = std::move(pc), b, d, inv_tau]() mutable {
               const T dy = out.grad()[0];
               const T scale = dy * T(0.5) / static_cast<T>(b);
               for (int64_t i = 0; i < b; ++i) {
                 for (int64_t j = 0; j < b; ++j) {
                   const T delta = i == j ? T(1) : T(0);
                   const T ds = scale * ((pr[i * b + j] - delta) + (pc[i * b + j] - delta)) * inv_tau;
                   if (ds == T(0)) continue;
                   const int64_t row_t = labels[static_cast<size_t>(j)];
                   if (v.requires_grad()) {
                     for (int64_t k = 0; k < d; ++k) v.grad()[i * d + k] += ds * text.at(row_t, k);
                   }
                   if (text.requires_grad()) {
                     for (int64_t k = 0; k < d; ++k) text.grad()[row_t * d + k] += ds * v.at(i, k);
                   }
                 }
               }
             });
  }
  return out;
}

template <class T>
LossReport CombinedLoss<T>::report() const {
  return LossReport{static_cast<double>(cls.item()), static_cast<double>(con.item()),
                    static_cast<double>(total.item()), lambda};
}

template <class T>
CombinedLoss<T> combined_loss(Graph<T>& g, const Tensor<T>& logits, const std::vector<int>& labels,
                              const Tensor<T>& v, const Tensor<T>& text, std::span<const double> weights,
                              double lambda, double tau) {
  CombinedLoss<T> l;
  l.lambda = lambda;
  l.cls = weighted_cross_entropy(g, logits, labels, weights);
  l.con = contrastive_loss(g, v, labels, text, tau);
  l.total = ops::add_scaled(g, l.cls, l.con, static_cast<T>(lambda));
  return l;
}

MetricsReport macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("macro_f1: predictions and labels differ in length");
  if (labels.empty()) throw EmptySequenceError("macro_f1 over zero samples");
  check_labels(predictions, kNumClasses);
  check_labels(labels, kNumClasses);
  MetricsReport m;
  for (size_t i = 0; i < labels.size(); ++i) ++m.confusion[labels[i]][predictions[i]];
  double sum = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const int64_t tp = m.confusion[c][c];
    int64_t fp = 0, fn = 0;
    for (int o = 0; o < kNumClasses; ++o) {
      if (o == c) continue;
      fp += m.confusion[o][c];
      fn += m.confusion[c][o];
    }
    const int64_t denom = 2 * tp + fp + fn;
    m.per_class_f1[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    sum += m.per_class_f1[c];
  }
  m.macro_f1 = sum / kNumClasses;
  return m;
}

json to_json(const MetricsReport& m) {
  json conf = json::array();
  for (const auto& row : m.confusion) conf.push_back(row);
  return json{{"macro_f1", m.macro_f1}, {"per_class_f1", m.per_class_f1}, {"confusion", conf}};
}

std::string format_metrics_table(const MetricsReport& m) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "Class" << std::right << std::setw(8) << "F1" << std::setw(10) << "Support"
     << '\n';
  for (int c = 0; c < kNumClasses; ++c) {
    int64_t support = 0;
    for (int64_t n : m.confusion[c]) support += n;
    os << std::left << std::setw(12) << kClassNames[c] << std::right << std::setw(8) << std::fixed
       << std::setprecision(4) << m.per_class_f1[c] << std::setw(10) << support << '\n';
  }
  os << std::left << std::setw(12) << "Macro F1" << std::right << std::setw(8) << std::fixed << std::setprecision(4)
     << m.macro_f1 << '\n';
  return os.str();
}

template <class T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  std::vector<int> out;
  const int64_t c = logits.cols();
  for (int64_t i = 0; i < logits.rows(); ++i) {
    const T* row = logits.ptr() + i * c;
    out.push_back(static_cast<int>(std::max_element(row, row + c) - row));
  }
  return out;
}

#define MMFER_INSTANTIATE_OBJECTIVES(T)                                                                              \
  template Tensor<T> weighted_cross_entropy(Graph<T>&, const Tensor<T>&, const std::vector<int>&,                    \
                                            std::span<const double>, double);                                        \
  template Tensor<T> contrastive_loss(Graph<T>&, const Tensor<T>&, const std::vector<int>&, const Tensor<T>&,        \
                                      double);                                                                       \
  template struct CombinedLoss<T>;                                                                                   \
  template CombinedLoss<T> combined_loss(Graph<T>&, const Tensor<T>&, const std::vector<int>&, const Tensor<T>&,     \
                                         const Tensor<T>&, std::span<const double>, double, double);                 \
  template std::vector<int> argmax_rows(const Tensor<T>&);

MMFER_INSTANTIATE_OBJECTIVES(float)
MMFER_INSTANTIATE_OBJECTIVES(double)
#undef MMFER_INSTANTIATE_OBJECTIVES

}  // namespace mmfer
