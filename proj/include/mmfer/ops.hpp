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
#include <vector>

#include "mmfer/rng.hpp"
#include "mmfer/tensor.hpp"

namespace mmfer {

enum class Mode { kTrain, kEval };

// A contiguous block of rows belonging to one sample inside a row-stacked
// batch. `key` identifies the sample for dropout-mask generation, so a sample
// receives the same mask no matter which micro-batch it lands in.
struct Segment {
  int64_t offset = 0;
  int64_t length = 0;
  uint64_t key = 0;
};
using Segments = std::vector<Segment>;

Segments whole_sequence(int64_t rows, uint64_t key = 0);
// One length-1 segment per row (pooled per-sample matrices).
Segments row_segments(const Segments& samples);
int64_t total_rows(const Segments& segs);

// Dropout randomness owned by a training run.
struct DropoutContext {
  CounterRng rng;
  uint64_t step = 0;
};

namespace ops {

// [M×K]·[K×N]. Backward: dA = dC·Bᵀ, dB = Aᵀ·dC.
template <class T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

// x·W + b with x [N×in], W [in×out], b [out] (b may be undefined).
template <class T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <class T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

// a + c·b, elementwise.
template <class T>
Tensor<T> add_scaled(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b, T c);

// Elementwise product.
template <class T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x);

// Inverted dropout. In train mode each element of row r of segment s is
// dropped with probability p, drawn from ctx->rng at
// (ctx->step, s.key, site, r·cols + c). Eval mode and p = 0 are the identity.
template <class T>
Tensor<T> dropout(Graph<T>& g, const Tensor<T>& x, double p, Mode mode, const DropoutContext* ctx, uint32_t site,
                  const Segments& segs);

// Per-row normalization over the feature axis followed by gamma/beta.
template <class T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

template <class T>
Tensor<T> softmax_rows(Graph<T>& g, const Tensor<T>& x);

// Causal dilated 1-D convolution, applied independently to every segment.
// w is [k×C_in×C_out]; tap j reads frame t − (k−1−j)·dilation, frames before
// the segment start read as zero.
template <class T>
Tensor<T> conv1d_causal(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int dilation,
                        const Segments& segs);

// Mean over the rows of each segment: [N×D] → [B×D].
template <class T>
Tensor<T> mean_pool_time(Graph<T>& g, const Tensor<T>& x, const Segments& segs);

// Row-wise x/‖x‖₂. Throws DegenerateVectorError when a row norm is ≤ eps.
template <class T>
Tensor<T> l2_normalize_rows(Graph<T>& g, const Tensor<T>& x, double eps = 1e-8);

template <class T>
Tensor<T> concat_cols(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b);

// Scaled dot-product attention over already-projected Q, K, V with `heads`
// heads; query segment i attends to key segment i only. Attention weights
// (per segment, per head, row-major T_q×T_k) are appended to `weights_out`
// when it is non-null.
template <class T>
Tensor<T> attention(Graph<T>& g, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                    const Segments& q_segs, const Segments& k_segs, std::vector<T>* weights_out = nullptr);

// Σ x ⊙ c as a scalar, with c a constant of x's shape.
template <class T>
Tensor<T> sum_product(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& c);

}  // namespace ops
}  // namespace mmfer
