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

#include <gtest/gtest.h>

#include "mmfer/errors.hpp"
#include "mmfer/grad_check.hpp"
#include "mmfer/ops.hpp"

using namespace mmfer;

namespace {
Tensor<double> ones(Shape s) {
  Tensor<double> t(s);
  for (auto& x : t.data()) x = 1.0;
  return t;
}
}  // namespace

TEST(GradCheck, QuadraticOracle) {
  Tensor<double> theta({2}, {1, 2}, true);
  auto f = [&](Graph<double>& g) { return ops::sum_product(g, ops::mul(g, theta, theta), ones({2})); };
  Graph<double> g;
  g.backward(f(g));
  EXPECT_DOUBLE_EQ(theta.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(theta.grad()[1], 4.0);
  theta.zero_grad();
  const auto r = grad_check(f, {theta});
  EXPECT_LE(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coordinates_checked, 2u);
  // The probe restores every coordinate.
  EXPECT_EQ(theta[0], 1.0);
  EXPECT_EQ(theta[1], 2.0);
}

TEST(GradCheck, ConstantFunction) {
  Tensor<double> theta({3}, {1, 2, 3}, true);
  auto f = [&](Graph<double>&) { return Tensor<double>::scalar(4.0); };
  EXPECT_EQ(grad_check(f, {theta}).max_rel_error, 0.0);
}

TEST(GradCheck, NonScalarOutputRejected) {
  Tensor<double> theta({3}, {1, 2, 3}, true);
  auto f = [&](Graph<double>& g) { return ops::relu(g, theta); };
  EXPECT_THROW(grad_check(f, {theta}), ContractError);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // detach() hides θ from the tape, so the analytic gradient is half the true one.
  Tensor<double> theta({4}, {0.5, -1, 2, 3}, true);
  auto f = [&](Graph<double>& g) { return ops::sum_product(g, ops::mul(g, theta, theta.detach()), ones({4})); };
  EXPECT_GT(grad_check(f, {theta}).max_rel_error, 0.1);
}

TEST(GradCheck, SubsamplesLargeParameterSets) {
  Tensor<double> theta({50, 40}, true);
  for (int64_t i = 0; i < theta.numel(); ++i) theta[i] = 0.001 * static_cast<double>(i % 97);
  auto f = [&](Graph<double>& g) { return ops::sum_product(g, ops::mul(g, theta, theta), ones({50, 40})); };
  GradCheckOptions opts;
  opts.max_coordinates = 150;
  const auto r = grad_check(f, {theta}, opts);
  EXPECT_EQ(r.coordinates_checked, 150u);
  EXPECT_LE(r.max_rel_error, 1e-6);
  opts.max_coordinates = 10;
  EXPECT_EQ(grad_check(f, {theta}, opts).coordinates_checked, 100u);
}
