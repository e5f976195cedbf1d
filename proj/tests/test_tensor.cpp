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
#include "mmfer/ops.hpp"
#include "mmfer/tensor.hpp"

using namespace mmfer;

TEST(Tensor, ShapeAndStorage) {
  Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.rows(), 2);
  EXPECT_EQ(t.cols(), 3);
  EXPECT_FLOAT_EQ(t.at(1, 2), 6.0f);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor<float>({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, GradSlotFollowsRequiresGrad) {
  Tensor<float> t({2, 2}, true);
  ASSERT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 4u);
  t.grad()[1] = 3.0f;
  t.zero_grad();
  EXPECT_EQ(t.grad()[1], 0.0f);
  t.set_requires_grad(false);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, HandlesAliasAndCloneCopies) {
  Tensor<float> a({2}, {1, 2});
  Tensor<float> alias = a;
  Tensor<float> copy = a.clone();
  a[0] = 9;
  EXPECT_EQ(alias[0], 9);
  EXPECT_EQ(copy[0], 1);
  EXPECT_TRUE(alias.same_storage(a));
  EXPECT_FALSE(copy.same_storage(a));
}

TEST(Tensor, CastRoundTrip) {
  Tensor<float> a({3}, {0.5f, -1.25f, 3.0f});
  const auto d = a.cast<double>();
  EXPECT_DOUBLE_EQ(d[1], -1.25);
  EXPECT_EQ(d.cast<float>()[2], 3.0f);
}

TEST(Tensor, AllFinite) {
  Tensor<float> a({2}, {1, 2});
  EXPECT_TRUE(a.all_finite());
  a[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(a.all_finite());
}

TEST(Graph, BackwardVisitsEveryNodeOnce) {
  // y = sum((a + a)·b) shares `a` twice in one node and reuses the sum.
  Graph<double> g;
  Tensor<double> a({1, 2}, {1, 2}, true);
  Tensor<double> b({2, 1}, {3, 4}, true);
  auto s = ops::add(g, a, a);
  auto y = ops::matmul(g, s, b);
  g.backward(y);
  EXPECT_DOUBLE_EQ(a.grad()[0], 6);
  EXPECT_DOUBLE_EQ(a.grad()[1], 8);
  EXPECT_DOUBLE_EQ(b.grad()[0], 2);
  EXPECT_DOUBLE_EQ(b.grad()[1], 4);
}

TEST(Graph, BackwardAccumulatesUntilZeroed) {
  Tensor<double> a({1, 1}, {2}, true);
  Tensor<double> b({1, 1}, {5}, true);
  for (int i = 0; i < 2; ++i) {
    Graph<double> g;
    g.backward(ops::matmul(g, a, b));
  }
  EXPECT_DOUBLE_EQ(a.grad()[0], 10);
  a.zero_grad();
  EXPECT_DOUBLE_EQ(a.grad()[0], 0);
}

TEST(Graph, NonScalarLossIsRejected) {
  Graph<double> g;
  Tensor<double> a({1, 2}, {1, 2}, true);
  auto r = ops::relu(g, a);
  EXPECT_THROW(g.backward(r), ContractError);
}

TEST(Graph, NonRecordingGraphRecordsNothing) {
  Graph<double> g(false);
  Tensor<double> a({1, 2}, {1, -2}, true);
  auto r = ops::relu(g, a);
  EXPECT_EQ(g.size(), 0u);
  EXPECT_FALSE(r.requires_grad());
}
