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
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmfer/errors.hpp"

namespace mmfer {

using Shape = std::vector<int64_t>;

std::string shape_to_string(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Dense row-major array with an optional gradient slot.
//
// Tensor is a shared handle: copies alias the same storage, as with framework
// tensors. Use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) { return Tensor(std::move(shape), requires_grad); }
  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(size_t axis) const { return impl_->shape.at(axis); }
  size_t ndim() const { return impl_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(impl_->value.size()); }
  // Rows/cols of a matrix; a 1-D tensor is treated as a single row.
  int64_t rows() const { return ndim() == 1 ? 1 : impl_->shape[0]; }
  int64_t cols() const { return impl_->shape.back(); }

  std::span<T> data() { return impl_->value; }
  std::span<const T> data() const { return impl_->value; }
  T* ptr() { return impl_->value.data(); }
  const T* ptr() const { return impl_->value.data(); }
  T& operator[](int64_t i) { return impl_->value[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return impl_->value[static_cast<size_t>(i)]; }
  T& at(int64_t r, int64_t c) { return impl_->value[static_cast<size_t>(r * cols() + c)]; }
  const T& at(int64_t r, int64_t c) const { return impl_->value[static_cast<size_t>(r * cols() + c)]; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  // The gradient slot belongs to the shared storage, so const handles (e.g.
  // captured inputs of a backward closure) can still accumulate into it.
  std::span<T> grad() const { return impl_->grad; }
  T* grad_ptr() const { return impl_->grad.data(); }
  void zero_grad();

  Tensor clone() const;
  // Same values, no gradient tracking.
  Tensor detach() const;
  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape());
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>((*this)[i]);
    return out;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Tape of recorded operations. Nodes are appended in execution order, which is
// a topological order by construction; backward() walks the tape in reverse.
//
// A non-recording graph runs the same ops forward-only (inference, finite
// differences).
template <class T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return recording_; }

  // Registers `out` as produced by `op` from `inputs`. Only recorded when the
  // graph is recording and some input requires grad; in that case `out`
  // receives a zeroed gradient slot. Returns whether a node was recorded, so
  // callers can skip building the backward closure.
  bool wants_grad(std::initializer_list<const Tensor<T>*> inputs) const;
  void record(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T>& out,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward closure once in
  // reverse order. Gradients accumulate into leaves.
  void backward(const Tensor<T>& loss);

  size_t size() const noexcept { return nodes_.size(); }
  const std::string& op_at(size_t i) const { return nodes_.at(i).op; }

 private:
  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Node> nodes_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace mmfer
