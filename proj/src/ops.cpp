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

#include "mmfer/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace mmfer {

Segments whole_sequence(int64_t rows, uint64_t key) { return {Segment{0, rows, key}}; }

Segments row_segments(const Segments& samples) {
  Segments out;
  out.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    out.push_back(Segment{static_cast<int64_t>(i), 1, samples[i].key});
  }
  return out;
}

int64_t total_rows(const Segments& segs) {
  int64_t n = 0;
  for (const auto& s : segs) n += s.length;
  return n;
}

namespace ops {
namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using StridedMap = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedMap = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

template <class T>
CMapR<T> values(const Tensor<T>& t, int64_t rows, int64_t cols) {
  return CMapR<T>(t.ptr(), rows, cols);
}
template <class T>
MapR<T> values(Tensor<T>& t, int64_t rows, int64_t cols) {
  return MapR<T>(t.ptr(), rows, cols);
}
template <class T>
MapR<T> grads(const Tensor<T>& t, int64_t rows, int64_t cols) {
  return MapR<T>(t.grad_ptr(), rows, cols);
}

void require_matrix(const char* op, const Shape& s) {
  if (s.size() != 2) throw ShapeError(std::string(op) + " expects a matrix, got " + shape_to_string(s));
}

void require_vector_len(const char* op, const char* what, const Shape& s, int64_t n) {
  if (s.size() != 1 || s[0] != n) {
    throw ShapeError(std::string(op) + ": " + what + " must be [" + std::to_string(n) + "], got " +
                     shape_to_string(s));
  }
}

void require_segments(const char* op, const Segments& segs, int64_t rows) {
  int64_t expect = 0;
  for (const auto& s : segs) {
    if (s.offset != expect || s.length < 0) {
      throw ShapeError(std::string(op) + ": segments must tile the rows contiguously");
    }
    expect += s.length;
  }
  if (expect != rows) {
    throw ShapeError(std::string(op) + ": segments cover " + std::to_string(expect) + " rows, tensor has " +
                     std::to_string(rows));
  }
}

}  // namespace

template <class T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul", a.shape());
  require_matrix("matmul", b.shape());
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  Tensor<T> out({m, n});
  values(out, m, n).noalias() = values(a, m, k) * values(b, k, n);
  if (g.wants_grad({&a, &b})) {
    g.record("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
      auto dc = grads(out, m, n);
      if (a.requires_grad()) grads(a, m, k).noalias() += dc * values(b, k, n).transpose();
      if (b.requires_grad()) grads(b, k, n).noalias() += values(a, m, k).transpose() * dc;
    });
  }
  return out;
}

template <class T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_matrix("linear", x.shape());
  require_matrix("linear", w.shape());
  const int64_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                     shape_to_string(w.shape()));
  }
  if (b.defined()) require_vector_len("linear", "bias", b.shape(), out_dim);
  Tensor<T> out({n, out_dim});
  auto y = values(out, n, out_dim);
  y.noalias() = values(x, n, in) * values(w, in, out_dim);
  if (b.defined()) y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.ptr(), out_dim);
  if (g.wants_grad({&x, &w, &b})) {
    g.record("linear", {x, w, b}, out, [x, w, b, out, n, in, out_dim]() mutable {
      auto dy = grads(out, n, out_dim);
      if (x.requires_grad()) grads(x, n, in).noalias() += dy * values(w, in, out_dim).transpose();
      if (w.requires_grad()) grads(w, in, out_dim).noalias() += values(x, n, in).transpose() * dy;
      if (b.defined() && b.requires_grad()) grads(b, 1, out_dim) += dy.colwise().sum();
    });
  }
  return out;
}

template <class T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  return add_scaled(g, a, b, T(1));
}

template <class T>
Tensor<T> add_scaled(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b, T c) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + c * b[i];
  if (g.wants_grad({&a, &b})) {
    g.record("add", {a, b}, out, [a, b, out, c, n]() mutable {
      const auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (int64_t i = 0; i < n; ++i) db[i] += c * dy[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (g.wants_grad({&a, &b})) {
    g.record("mul", {a, b}, out, [a, b, out, n]() mutable {
      const auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i] * a[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  if (g.wants_grad({&x})) {
    g.record("relu", {x}, out, [x, out, n]() mutable {
      auto dx = x.grad();
      const auto dy = out.grad();
      for (int64_t i = 0; i < n; ++i) {
        if (x[i] > T(0)) dx[i] += dy[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> dropout(Graph<T>& g, const Tensor<T>& x, double p, Mode mode, const DropoutContext* ctx, uint32_t site,
                  const Segments& segs) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (mode == Mode::kEval || p == 0.0) return x;
  if (ctx == nullptr) throw ContractError("train-mode dropout needs a DropoutContext");
  const int64_t rows = x.rows(), cols = x.cols();
  require_segments("dropout", segs, rows);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(static_cast<size_t>(x.numel()));
  for (const auto& s : segs) {
    for (int64_t r = 0; r < s.length; ++r) {
      for (int64_t c = 0; c < cols; ++c) {
        const double u = ctx->rng.uniform(ctx->step, s.key, site, static_cast<uint64_t>(r * cols + c));
        mask[static_cast<size_t>((s.offset + r) * cols + c)] = u >= p ? scale : T(0);
      }
    }
  }
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * mask[static_cast<size_t>(i)];
  if (g.wants_grad({&x})) {
    g.record("dropout", {x}, out, [x, out, mask = std::move(mask)]() mutable {
      auto dx = x.grad();
      const auto dy = out.grad();
      for (size_t i = 0; i < mask.size(); ++i) dx[i] += dy[i] * mask[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  require_matrix("layer_norm", x.shape());
  const int64_t n = x.dim(0), d = x.dim(1);
  if (d < 2) throw ShapeError("layer_norm needs at least 2 features, got " + shape_to_string(x.shape()));
  require_vector_len("layer_norm", "gamma", gamma.shape(), d);
  require_vector_len("layer_norm", "beta", beta.shape(), d);
  Tensor<T> out({n, d});
  // Normalized activations and reciprocal std are kept for backward.
  std::vector<T> xhat(static_cast<size_t>(n * d));
  std::vector<T> rstd(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const T* row = x.ptr() + r * d;
    T mean = 0;
    for (int64_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (int64_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    rstd[static_cast<size_t>(r)] = inv;
    for (int64_t c = 0; c < d; ++c) {
      const T h = (row[c] - mean) * inv;
      xhat[static_cast<size_t>(r * d + c)] = h;
      out.at(r, c) = h * gamma[c] + beta[c];
    }
  }
  if (g.wants_grad({&x, &gamma, &beta})) {
    g.record("layer_norm", {x, gamma, beta}, out,
             [x, gamma, beta, out, n, d, xhat = std::move(xhat), rstd = std::move(rstd)]() mutable {
               const auto dy = out.grad();
               std::vector<T> dxhat(static_cast<size_t>(d));
               for (int64_t r = 0; r < n; ++r) {
                 const T* h = xhat.data() + r * d;
                 const T* gy = dy.data() + r * d;
                 if (gamma.requires_grad()) {
                   auto dg = gamma.grad();
                   for (int64_t c = 0; c < d; ++c) dg[c] += gy[c] * h[c];
                 }
                 if (beta.requires_grad()) {
                   auto db = beta.grad();
                   for (int64_t c = 0; c < d; ++c) db[c] += gy[c];
                 }
                 if (!x.requires_grad()) continue;
                 T sum = 0, sum_h = 0;
                 for (int64_t c = 0; c < d; ++c) {
                   dxhat[c] = gy[c] * gamma[c];
                   sum += dxhat[c];
                   sum_h += dxhat[c] * h[c];
                 }
                 const T inv_d = T(1) / static_cast<T>(d);
                 T* dx = x.grad_ptr() + r * d;
                 for (int64_t c = 0; c < d; ++c) {
                   dx[c] += rstd[r] * (dxhat[c] - inv_d * sum - h[c] * inv_d * sum_h);
                 }
               }
             });
  }
  return out;
}

template <class T>
Tensor<T> softmax_rows(Graph<T>& g, const Tensor<T>& x) {
  const int64_t n = x.rows(), d = x.cols();
  Tensor<T> out(x.shape());
  for (int64_t r = 0; r < n; ++r) {
    const T* in = x.ptr() + r * d;
    T* y = out.ptr() + r * d;
    const T mx = *std::max_element(in, in + d);
    T sum = 0;
    for (int64_t c = 0; c < d; ++c) {
      y[c] = std::exp(in[c] - mx);
      sum += y[c];
    }
    for (int64_t c = 0; c < d; ++c) y[c] /= sum;
  }
  if (g.wants_grad({&x})) {
    g.record("softmax_rows", {x}, out, [x, out, n, d]() mutable {
      const auto dy = out.grad();
      auto dx = x.grad();
      for (int64_t r = 0; r < n; ++r) {
        T dot = 0;
        for (int64_t c = 0; c < d; ++c) dot += dy[r * d + c] * out[r * d + c];
        for (int64_t c = 0; c < d; ++c) dx[r * d + c] += out[r * d + c] * (dy[r * d + c] - dot);
      }
    });
  }
  return out;
}

namespace {

// Row t of the result holds [x[t−(k−1)d], …, x[t−d], x[t]] within its segment.
template <class T>
void im2col_causal(const T* x, int64_t c_in, int64_t k, int dilation, const Segments& segs, T* col) {
  const int64_t width = k * c_in;
  for (const auto& s : segs) {
    for (int64_t t = 0; t < s.length; ++t) {
      T* dst = col + (s.offset + t) * width;
      for (int64_t j = 0; j < k; ++j) {
        const int64_t src = t - (k - 1 - j) * dilation;
        if (src >= 0) {
          std::copy_n(x + (s.offset + src) * c_in, c_in, dst + j * c_in);
        } else {
          std::fill_n(dst + j * c_in, c_in, T(0));
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor<T> conv1d_causal(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int dilation,
                        const Segments& segs) {
  if (dilation <= 0) throw ParameterError("dilation must be positive, got " + std::to_string(dilation));
  require_matrix("conv1d_causal", x.shape());
  if (w.ndim() != 3) throw ShapeError("conv1d_causal weight must be [k x C_in x C_out], got " + shape_to_string(w.shape()));
  const int64_t n = x.dim(0), c_in = x.dim(1), k = w.dim(0), c_out = w.dim(2);
  if (w.dim(1) != c_in) {
    throw ShapeError("conv1d_causal: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                     shape_to_string(w.shape()));
  }
  if (b.defined()) require_vector_len("conv1d_causal", "bias", b.shape(), c_out);
  require_segments("conv1d_causal", segs, n);

  const int64_t width = k * c_in;
  MatR<T> col(n, width);
  im2col_causal(x.ptr(), c_in, k, dilation, segs, col.data());
  Tensor<T> out({n, c_out});
  auto y = values(out, n, c_out);
  y.noalias() = col * values(w, width, c_out);
  if (b.defined()) y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.ptr(), c_out);

  if (g.wants_grad({&x, &w, &b})) {
    g.record("conv1d_causal", {x, w, b}, out,
             [x, w, b, out, segs, dilation, n, c_in, k, c_out, width]() mutable {
               auto dy = grads(out, n, c_out);
               if (w.requires_grad()) {
                 MatR<T> col(n, width);
                 im2col_causal(x.ptr(), c_in, k, dilation, segs, col.data());
                 grads(w, width, c_out).noalias() += col.transpose() * dy;
               }
               if (b.defined() && b.requires_grad()) grads(b, 1, c_out) += dy.colwise().sum();
               if (x.requires_grad()) {
                 MatR<T> dcol(n, width);
                 dcol.noalias() = dy * values(w, width, c_out).transpose();
                 T* dx = x.grad_ptr();
                 for (const auto& s : segs) {
                   for (int64_t t = 0; t < s.length; ++t) {
                     const T* src_row = dcol.data() + (s.offset + t) * width;
                     for (int64_t j = 0; j < k; ++j) {
                       const int64_t src = t - (k - 1 - j) * dilation;
                       if (src < 0) continue;
                       T* dst = dx + (s.offset + src) * c_in;
                       const T* part = src_row + j * c_in;
                       for (int64_t c = 0; c < c_in; ++c) dst[c] += part[c];
                     }
                   }
                 }
               }
             });
  }
  return out;
}

template <class T>
Tensor<T> mean_pool_time(Graph<T>& g, const Tensor<T>& x, const Segments& segs) {
  require_matrix("mean_pool_time", x.shape());
  const int64_t d = x.dim(1);
  require_segments("mean_pool_time", segs, x.dim(0));
  if (segs.empty()) throw EmptySequenceError("mean_pool_time over zero segments");
  for (const auto& s : segs) {
    if (s.length == 0) throw EmptySequenceError("mean_pool_time over a sequence of length 0");
  }
  const int64_t b = static_cast<int64_t>(segs.size());
  Tensor<T> out({b, d});
  for (int64_t i = 0; i < b; ++i) {
    const auto& s = segs[static_cast<size_t>(i)];
    T* y = out.ptr() + i * d;
    for (int64_t t = 0; t < s.length; ++t) {
      const T* row = x.ptr() + (s.offset + t) * d;
      for (int64_t c = 0; c < d; ++c) y[c] += row[c];
    }
    const T inv = T(1) / static_cast<T>(s.length);
    for (int64_t c = 0; c < d; ++c) y[c] *= inv;
  }
  if (g.wants_grad({&x})) {
    g.record("mean_pool_time", {x}, out, [x, out, segs, d]() mutable {
      const auto dy = out.grad();
      auto dx = x.grad();
      for (size_t i = 0; i < segs.size(); ++i) {
        const auto& s = segs[i];
        const T inv = T(1) / static_cast<T>(s.length);
        for (int64_t t = 0; t < s.length; ++t) {
          for (int64_t c = 0; c < d; ++c) dx[(s.offset + t) * d + c] += dy[static_cast<int64_t>(i) * d + c] * inv;
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> l2_normalize_rows(Graph<T>& g, const Tensor<T>& x, double eps) {
  const int64_t n = x.rows(), d = x.cols();
  Tensor<T> out(x.shape());
  std::vector<T> norms(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const T* row = x.ptr() + r * d;
    T ss = 0;
    for (int64_t c = 0; c < d; ++c) ss += row[c] * row[c];
    const T norm = std::sqrt(ss);
    if (!(norm > static_cast<T>(eps))) {
      throw DegenerateVectorError("row " + std::to_string(r) + " has norm " + std::to_string(norm));
    }
    norms[static_cast<size_t>(r)] = norm;
    for (int64_t c = 0; c < d; ++c) out.ptr()[r * d + c] = row[c] / norm;
  }
  if (g.wants_grad({&x})) {
    g.record("l2_normalize", {x}, out, [x, out, n, d, norms = std::move(norms)]() mutable {
      const auto dy = out.grad();
      auto dx = x.grad();
      for (int64_t r = 0; r < n; ++r) {
        T dot = 0;
        for (int64_t c = 0; c < d; ++c) dot += out[r * d + c] * dy[r * d + c];
        const T inv = T(1) / norms[static_cast<size_t>(r)];
        for (int64_t c = 0; c < d; ++c) dx[r * d + c] += (dy[r * d + c] - out[r * d + c] * dot) * inv;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("concat_cols", a.shape());
  require_matrix("concat_cols", b.shape());
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols row mismatch: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  const int64_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor<T> out({n, da + db});
  for (int64_t r = 0; r < n; ++r) {
    std::copy_n(a.ptr() + r * da, da, out.ptr() + r * (da + db));
    std::copy_n(b.ptr() + r * db, db, out.ptr() + r * (da + db) + da);
  }
  if (g.wants_grad({&a, &b})) {
    g.record("concat_cols", {a, b}, out, [a, b, out, n, da, db]() mutable {
      const auto dy = out.grad();
      for (int64_t r = 0; r < n; ++r) {
        if (a.requires_grad()) {
          for (int64_t c = 0; c < da; ++c) a.grad()[r * da + c] += dy[r * (da + db) + c];
        }
        if (b.requires_grad()) {
          for (int64_t c = 0; c < db; ++c) b.grad()[r * db + c] += dy[r * (da + db) + da + c];
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> attention(Graph<T>& g, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                    const Segments& q_segs, const Segments& k_segs, std::vector<T>* weights_out) {
  require_matrix("attention", q.shape());
  require_matrix("attention", k.shape());
  require_matrix("attention", v.shape());
  const int64_t d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0)) {
    throw ShapeError("attention: q " + shape_to_string(q.shape()) + ", k " + shape_to_string(k.shape()) + ", v " +
                     shape_to_string(v.shape()));
  }
  if (heads <= 0 || d % heads != 0) {
    throw ParameterError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (q_segs.size() != k_segs.size()) throw ShapeError("attention: query/key segment counts differ");
  require_segments("attention", q_segs, q.dim(0));
  require_segments("attention", k_segs, k.dim(0));
  for (const auto& s : k_segs) {
    if (s.length == 0) throw EmptySequenceError("attention with zero keys");
  }
  const int64_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Tensor<T> out({q.dim(0), d});
  // Softmax weights for every (segment, head), kept for backward.
  std::vector<MatR<T>> probs;
  probs.reserve(q_segs.size() * static_cast<size_t>(heads));
  for (size_t s = 0; s < q_segs.size(); ++s) {
    const auto& qs = q_segs[s];
    const auto& ks = k_segs[s];
    for (int h = 0; h < heads; ++h) {
      CStridedMap<T> qh(q.ptr() + qs.offset * d + h * dh, qs.length, dh, Eigen::OuterStride<>(d));
      CStridedMap<T> kh(k.ptr() + ks.offset * d + h * dh, ks.length, dh, Eigen::OuterStride<>(d));
      CStridedMap<T> vh(v.ptr() + ks.offset * d + h * dh, ks.length, dh, Eigen::OuterStride<>(d));
      MatR<T> p = (qh * kh.transpose()) * scale;
      for (int64_t r = 0; r < p.rows(); ++r) {
        const T mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      StridedMap<T> oh(out.ptr() + qs.offset * d + h * dh, qs.length, dh, Eigen::OuterStride<>(d));
      oh.noalias() = p * vh;
      if (weights_out) weights_out->insert(weights_out->end(), p.data(), p.data() + p.size());
      probs.push_back(std::move(p));
    }
  }

  if (g.wants_grad({&q, &k, &v})) {
    g.record("attention", {q, k, v}, out,
             [q, k, v, out, heads, q_segs, k_segs, d, dh, scale, probs = std::move(probs)]() mutable {
               size_t idx = 0;
               for (size_t s = 0; s < q_segs.size(); ++s) {
                 const auto& qs = q_segs[s];
                 const auto& ks = k_segs[s];
                 for (int h = 0; h < heads; ++h, ++idx) {
                   const MatR<T>& p = probs[idx];
                   const int64_t off_q = qs.offset * d + h * dh, off_k = ks.offset * d + h * dh;
                   CStridedMap<T> doh(out.grad_ptr() + off_q, qs.length, dh, Eigen::OuterStride<>(d));
                   CStridedMap<T> qh(q.ptr() + off_q, qs.length, dh, Eigen::OuterStride<>(d));
                   CStridedMap<T> kh(k.ptr() + off_k, ks.length, dh, Eigen::OuterStride<>(d));
                   CStridedMap<T> vh(v.ptr() + off_k, ks.length, dh, Eigen::OuterStride<>(d));
                   if (v.requires_grad()) {
                     StridedMap<T> dvh(v.grad_ptr() + off_k, ks.length, dh, Eigen::OuterStride<>(d));
                     dvh.noalias() += p.transpose() * doh;
                   }
                   if (!q.requires_grad() && !k.requires_grad()) continue;
                   MatR<T> dp = doh * vh.transpose();
                   // Softmax backward, then the 1/sqrt(dh) score scaling.
                   MatR<T> ds(p.rows(), p.cols());
                   for (int64_t r = 0; r < p.rows(); ++r) {
                     const T dot = p.row(r).dot(dp.row(r));
                     ds.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)) * scale;
                   }
                   if (q.requires_grad()) {
                     StridedMap<T> dqh(q.grad_ptr() + off_q, qs.length, dh, Eigen::OuterStride<>(d));
                     dqh.noalias() += ds * kh;
                   }
                   if (k.requires_grad()) {
                     StridedMap<T> dkh(k.grad_ptr() + off_k, ks.length, dh, Eigen::OuterStride<>(d));
                     dkh.noalias() += ds.transpose() * qh;
                   }
                 }
               }
             });
  }
  return out;
}

template <class T>
Tensor<T> sum_product(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& c) {
  if (x.shape() != c.shape()) {
    throw ShapeError("sum_product: " + shape_to_string(x.shape()) + " vs " + shape_to_string(c.shape()));
  }
  T acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x[i] * c[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (g.wants_grad({&x})) {
    g.record("sum_product", {x}, out, [x, c, out]() mutable {
      const T dy = out.grad()[0];
      auto dx = x.grad();
      for (int64_t i = 0; i < x.numel(); ++i) dx[i] += dy * c[i];
    });
  }
  return out;
}

#define MMFER_INSTANTIATE_OPS(T)                                                                                   \
  template Tensor<T> matmul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> linear(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> add_scaled(Graph<T>&, const Tensor<T>&, const Tensor<T>&, T);                                 \
  template Tensor<T> mul(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> relu(Graph<T>&, const Tensor<T>&);                                                            \
  template Tensor<T> dropout(Graph<T>&, const Tensor<T>&, double, Mode, const DropoutContext*, uint32_t,           \
                             const Segments&);                                                                     \
  template Tensor<T> layer_norm(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);          \
  template Tensor<T> softmax_rows(Graph<T>&, const Tensor<T>&);                                                    \
  template Tensor<T> conv1d_causal(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,           \
                                   const Segments&);                                                               \
  template Tensor<T> mean_pool_time(Graph<T>&, const Tensor<T>&, const Segments&);                                 \
  template Tensor<T> l2_normalize_rows(Graph<T>&, const Tensor<T>&, double);                                       \
  template Tensor<T> concat_cols(Graph<T>&, const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> attention(Graph<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,               \
                               const Segments&, const Segments&, std::vector<T>*);                                 \
  template Tensor<T> sum_product(Graph<T>&, const Tensor<T>&, const Tensor<T>&);

MMFER_INSTANTIATE_OPS(float)
MMFER_INSTANTIATE_OPS(double)

#undef MMFER_INSTANTIATE_OPS

}  // namespace ops
}  // namespace mmfer
