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

#include "mmfer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mmfer {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

template <class T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  impl_->value.assign(static_cast<size_t>(shape_numel(shape)), T(0));
  impl_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) : impl_(std::make_shared<Impl>()) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("shape " + shape_to_string(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  impl_->shape = std::move(shape);
  impl_->value = std::move(values);
  set_requires_grad(requires_grad);
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  return impl_->value[0];
}

template <class T>
void Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (on) {
    impl_->grad.assign(impl_->value.size(), T(0));
  } else {
    impl_->grad.clear();
  }
}

template <class T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out;
  out.impl_ = std::make_shared<Impl>(*impl_);
  return out;
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->value, false);
}

template <class T>
bool Tensor<T>::all_finite() const {
  return std::all_of(impl_->value.begin(), impl_->value.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
bool Graph<T>::wants_grad(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template <class T>
void Graph<T>::record(std::string_view op, std::vector<Tensor<T>> inputs, Tensor<T>& out,
                      std::function<void()> backward) {
  out.set_requires_grad(true);
  nodes_.push_back(Node{std::string(op), std::move(inputs), out, std::move(backward)});
}

template <class T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace mmfer
