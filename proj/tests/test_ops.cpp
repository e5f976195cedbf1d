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

#include <cmath>
#include <random>

#include "mmfer/errors.hpp"
#include "mmfer/grad_check.hpp"
#include "mmfer/ops.hpp"
#include "mmfer/rng.hpp"

using namespace mmfer;

namespace {

Tensor<double> random_tensor(Shape shape, uint64_t seed, bool requires_grad = true) {
  SeededStream rng(seed);
  Tensor<double> t(shape, requires_grad);
  for (auto& x : t.data()) x = rng.normal();
  return t;
}

// Scalar reduction with fixed, non-uniform coefficients so every output
// element carries a distinct gradient.
Tensor<double> reduce(Graph<double>& g, const Tensor<double>& y, uint64_t seed = 99) {
  return ops::sum_product(g, y, random_tensor(y.shape(), seed, false));
}

template <class F>
double check(F f, const std::vector<Tensor<double>>& params) {
  return grad_check([&](Graph<double>& g) { return f(g); }, params).max_rel_error;
}

}  // namespace

TEST(Matmul, Examples) {
  Graph<float> g(false);
  Tensor<float> eye({2, 2}, {1, 0, 0, 1});
  Tensor<float> m({2, 2}, {1, 2, 3, 4});
  const auto r = ops::matmul(g, eye, m);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(r[i], m[i]);

  const auto dot = ops::matmul(g, Tensor<float>({1, 2}, {1, 2}), Tensor<float>({2, 1}, {3, 4}));
  EXPECT_EQ(dot.item(), 11.0f);

  SeededStream rng(1);
  Tensor<float> any({3, 4});
  for (auto& x : any.data()) x = static_cast<float>(rng.normal());
  const auto z = ops::matmul(g, Tensor<float>::zeros({2, 3}), any);
  EXPECT_EQ(z.shape(), (Shape{2, 4}));
  for (float x : z.data()) EXPECT_EQ(x, 0.0f);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph<float> g(false);
  try {
    ops::matmul(g, Tensor<float>({2, 3}), Tensor<float>({4, 5}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  Graph<double> g(false);
  auto a = ops::softmax_rows(g, Tensor<double>({1, 2}, {0, 0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  auto b = ops::softmax_rows(g, Tensor<double>({1, 2}, {0, std::log(2.0)}));
  EXPECT_NEAR(b[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(b[1], 2.0 / 3.0, 1e-12);
  auto c = ops::softmax_rows(g, Tensor<double>({1, 2}, {1000, 1000}));
  EXPECT_DOUBLE_EQ(c[0], 0.5);
  EXPECT_DOUBLE_EQ(c[1], 0.5);
}

TEST(Softmax, RowsSumToOne) {
  Graph<float> g(false);
  SeededStream rng(3);
  Tensor<float> x({5, 7});
  for (auto& v : x.data()) v = static_cast<float>(10 * rng.normal());
  const auto y = ops::softmax_rows(g, x);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) {
      EXPECT_GE(y.at(r, c), 0.0f);
      s += y.at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(LayerNorm, Examples) {
  Graph<double> g(false);
  Tensor<double> one({2}, {1, 1}), zero({2}, {0, 0});
  auto constant = ops::layer_norm(g, Tensor<double>({1, 2}, {7, 7}), one, zero);
  EXPECT_EQ(constant[0], 0.0);
  EXPECT_EQ(constant[1], 0.0);
  auto pair = ops::layer_norm(g, Tensor<double>({1, 2}, {1, 3}), one, zero, 1e-12);
  EXPECT_NEAR(pair[0], -1.0, 1e-9);
  EXPECT_NEAR(pair[1], 1.0, 1e-9);
  Tensor<double> beta({2}, {0.25, -4});
  auto collapsed = ops::layer_norm(g, random_tensor({3, 2}, 5, false), zero, beta);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(collapsed.at(r, 0), 0.25);
    EXPECT_EQ(collapsed.at(r, 1), -4.0);
  }
}

TEST(LayerNorm, MomentsOfNormalizedRows) {
  Graph<float> g(false);
  const int d = 16;
  Tensor<float> x({4, d});
  SeededStream rng(11);
  for (auto& v : x.data()) v = static_cast<float>(3 + 5 * rng.normal());
  Tensor<float> gamma({d}, std::vector<float>(d, 1.0f)), beta({d});
  const auto y = ops::layer_norm(g, x, gamma, beta);
  for (int r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (int c = 0; c < d; ++c) m += y.at(r, c);
    m /= d;
    for (int c = 0; c < d; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
    v /= d;
    EXPECT_LE(std::abs(m), 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(Conv1dCausal, Examples) {
  Graph<double> g(false);
  // k = 1 identity channel map.
  Tensor<double> x = random_tensor({5, 3}, 2, false);
  Tensor<double> eye({1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto same = ops::conv1d_causal(g, x, eye, Tensor<double>({3}), 1, whole_sequence(5));
  for (int i = 0; i < 15; ++i) EXPECT_EQ(same[i], x[i]);

  auto y = ops::conv1d_causal(g, Tensor<double>({4, 1}, {1, 2, 3, 4}), Tensor<double>({3, 1, 1}, {1, 1, 1}),
                              Tensor<double>({1}), 1, whole_sequence(4));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 3, 6, 9}));
}

TEST(Conv1dCausal, TapOrderAndDilation) {
  Graph<double> g(false);
  // Taps [a, b, c] read x[t-2d], x[t-d], x[t].
  auto y = ops::conv1d_causal(g, Tensor<double>({5, 1}, {1, 10, 100, 1000, 10000}),
                              Tensor<double>({3, 1, 1}, {1, 2, 3}), Tensor<double>({1}, std::vector<double>{0.5}), 2,
                              whole_sequence(5));
  EXPECT_DOUBLE_EQ(y[0], 3 + 0.5);
  EXPECT_DOUBLE_EQ(y[2], 300 + 2 + 0.5);
  EXPECT_DOUBLE_EQ(y[4], 30000 + 200 + 1 + 0.5);
}

TEST(Conv1dCausal, NonPositiveDilationRejected) {
  Graph<double> g(false);
  EXPECT_THROW(ops::conv1d_causal(g, Tensor<double>({2, 1}), Tensor<double>({3, 1, 1}), Tensor<double>({1}), 0,
                                  whole_sequence(2)),
               ParameterError);
}

TEST(Conv1dCausal, PerturbingLaterFramesLeavesEarlierOutputsBitwise) {
  Graph<float> g(false);
  SeededStream rng(8);
  Tensor<float> x({12, 4}), w({3, 4, 5}), b({5});
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  for (auto& v : w.data()) v = static_cast<float>(rng.normal());
  const auto base = ops::conv1d_causal(g, x, w, b, 2, whole_sequence(12));
  for (int t = 0; t < 12; ++t) {
    Tensor<float> xp = x.clone();
    for (int c = 0; c < 4; ++c) xp.at(t, c) += 1.0f;
    const auto y = ops::conv1d_causal(g, xp, w, b, 2, whole_sequence(12));
    for (int r = 0; r < t * 5; ++r) ASSERT_EQ(y[r], base[r]) << "perturbed frame " << t;
  }
}

TEST(Conv1dCausal, SegmentsDoNotLeak) {
  Graph<double> g(false);
  Tensor<double> w({3, 1, 1}, {1, 1, 1}), b({1});
  Segments segs{{0, 2, 0}, {2, 3, 1}};
  auto y = ops::conv1d_causal(g, Tensor<double>({5, 1}, {1, 2, 3, 4, 5}), w, b, 1, segs);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 3, 3, 7, 12}));
}

TEST(MeanPool, Examples) {
  Graph<double> g(false);
  auto single = ops::mean_pool_time(g, Tensor<double>({1, 3}, {1, 2, 3}), whole_sequence(1));
  EXPECT_EQ(single[2], 3.0);
  auto two = ops::mean_pool_time(g, Tensor<double>({2, 2}, {1, 2, 3, 4}), whole_sequence(2));
  EXPECT_EQ(two[0], 2.0);
  EXPECT_EQ(two[1], 3.0);
  auto swapped = ops::mean_pool_time(g, Tensor<double>({2, 2}, {3, 4, 1, 2}), whole_sequence(2));
  EXPECT_EQ(swapped[0], two[0]);
  EXPECT_EQ(swapped[1], two[1]);
}

TEST(MeanPool, EmptySegmentRejected) {
  Graph<double> g(false);
  Segments segs{{0, 2, 0}, {2, 0, 1}};
  EXPECT_THROW(ops::mean_pool_time(g, Tensor<double>({2, 2}), segs), EmptySequenceError);
}

TEST(L2Normalize, Examples) {
  Graph<double> g(false);
  auto e1 = ops::l2_normalize_rows(g, Tensor<double>({1, 3}, {1, 0, 0}));
  EXPECT_EQ(e1[0], 1.0);
  auto v = ops::l2_normalize_rows(g, Tensor<double>({1, 2}, {3, 4}));
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.8, 1e-15);
  auto scaled = ops::l2_normalize_rows(g, Tensor<double>({1, 2}, {30, 40}));
  EXPECT_NEAR(scaled[0], v[0], 1e-15);
  EXPECT_NEAR(scaled[1], v[1], 1e-15);
}

TEST(L2Normalize, UnitNormAndDegenerateRows) {
  Graph<float> g(false);
  SeededStream rng(4);
  Tensor<float> x({6, 32});
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  const auto y = ops::l2_normalize_rows(g, x);
  for (int r = 0; r < 6; ++r) {
    double n = 0;
    for (int c = 0; c < 32; ++c) n += double(y.at(r, c)) * y.at(r, c);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
  EXPECT_THROW(ops::l2_normalize_rows(g, Tensor<float>({1, 3})), DegenerateVectorError);
}

TEST(ReluDropout, Examples) {
  Graph<float> g(false);
  auto r = ops::relu(g, Tensor<float>({1, 2}, {-1, 2}));
  EXPECT_EQ(r[0], 0.0f);
  EXPECT_EQ(r[1], 2.0f);

  DropoutContext ctx{CounterRng(5), 1};
  Tensor<float> x({3, 4}, std::vector<float>(12, 1.5f));
  const auto p0 = ops::dropout(g, x, 0.0, Mode::kTrain, &ctx, 1, whole_sequence(3));
  const auto ev = ops::dropout(g, x, 0.7, Mode::kEval, &ctx, 1, whole_sequence(3));
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(p0[i], x[i]);
    EXPECT_EQ(ev[i], x[i]);
  }
  EXPECT_THROW(ops::dropout(g, x, 1.0, Mode::kTrain, &ctx, 1, whole_sequence(3)), ParameterError);
  EXPECT_THROW(ops::dropout(g, x, -0.1, Mode::kEval, &ctx, 1, whole_sequence(3)), ParameterError);
}

TEST(Dropout, RateScaleAndReplay) {
  Graph<float> g(false);
  DropoutContext ctx{CounterRng(42), 7};
  Tensor<float> x({200, 50}, std::vector<float>(10000, 1.0f));
  const auto a = ops::dropout(g, x, 0.1, Mode::kTrain, &ctx, 3, whole_sequence(200, 9));
  const auto b = ops::dropout(g, x, 0.1, Mode::kTrain, &ctx, 3, whole_sequence(200, 9));
  int dropped = 0;
  for (int i = 0; i < 10000; ++i) {
    ASSERT_EQ(a[i], b[i]);
    if (a[i] == 0.0f) ++dropped;
    else EXPECT_FLOAT_EQ(a[i], 1.0f / 0.9f);
  }
  EXPECT_NEAR(dropped / 10000.0, 0.1, 0.015);

  DropoutContext next{CounterRng(42), 8};
  const auto c = ops::dropout(g, x, 0.1, Mode::kTrain, &next, 3, whole_sequence(200, 9));
  int same = 0;
  for (int i = 0; i < 10000; ++i) same += (a[i] == c[i]);
  EXPECT_LT(same, 10000);
}

TEST(Dropout, MaskDependsOnSampleKeyNotPosition) {
  Graph<float> g(false);
  DropoutContext ctx{CounterRng(1), 1};
  Tensor<float> one({4, 8}, std::vector<float>(32, 1.0f));
  Tensor<float> two({8, 8}, std::vector<float>(64, 1.0f));
  const auto alone = ops::dropout(g, one, 0.5, Mode::kTrain, &ctx, 0, whole_sequence(4, 77));
  const auto stacked = ops::dropout(g, two, 0.5, Mode::kTrain, &ctx, 0, Segments{{0, 4, 3}, {4, 4, 77}});
  for (int i = 0; i < 32; ++i) EXPECT_EQ(alone[i], stacked[32 + i]);
}

TEST(Attention, WeightRowsSumToOneAndSingleKey) {
  Graph<double> g(false);
  auto q = random_tensor({5, 8}, 1, false), k = random_tensor({3, 8}, 2, false), v = random_tensor({3, 8}, 3, false);
  std::vector<double> w;
  ops::attention(g, q, k, v, 2, whole_sequence(5), whole_sequence(3), &w);
  ASSERT_EQ(w.size(), 2u * 5 * 3);
  for (size_t r = 0; r < w.size(); r += 3) EXPECT_NEAR(w[r] + w[r + 1] + w[r + 2], 1.0, 1e-12);

  auto k1 = random_tensor({1, 8}, 4, false), v1 = random_tensor({1, 8}, 5, false);
  auto out = ops::attention(g, q, k1, v1, 2, whole_sequence(5), whole_sequence(1));
  for (int t = 0; t < 5; ++t) {
    for (int c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(out.at(t, c), v1[c]);
  }
}

TEST(Attention, EmptyKeysRejected) {
  Graph<double> g(false);
  Segments qs{{0, 2, 0}}, ks{{0, 0, 0}};
  EXPECT_THROW(ops::attention(g, random_tensor({2, 4}, 1, false), Tensor<double>({1, 4}), Tensor<double>({1, 4}), 1,
                              qs, Segments{{0, 0, 0}, {0, 1, 1}}),
               Error);
  (void)ks;
}

TEST(Attention, SegmentsAttendWithinSample) {
  Graph<double> g(false);
  auto q = random_tensor({3, 4}, 1, false);
  auto k = random_tensor({4, 4}, 2, false), v = random_tensor({4, 4}, 3, false);
  Segments qs{{0, 1, 0}, {1, 2, 1}}, ks{{0, 3, 0}, {3, 1, 1}};
  auto out = ops::attention(g, q, k, v, 1, qs, ks);
  // The second sample has a single key, so its rows copy that value row.
  for (int c = 0; c < 4; ++c) {
    EXPECT_DOUBLE_EQ(out.at(1, c), v.at(3, c));
    EXPECT_DOUBLE_EQ(out.at(2, c), v.at(3, c));
  }
}

TEST(GradCheckOps, EveryDifferentiableOp) {
  auto a = random_tensor({3, 4}, 1), b = random_tensor({4, 5}, 2), bias = random_tensor({5}, 3);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::matmul(g, a, b)); }, {a, b}), 1e-4);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::linear(g, a, b, bias)); }, {a, b, bias}), 1e-4);

  auto c = random_tensor({3, 4}, 4);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::add(g, a, c)); }, {a, c}), 1e-4);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::add_scaled(g, a, c, 0.3)); }, {a, c}), 1e-4);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::relu(g, a)); }, {a}), 1e-4);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::softmax_rows(g, a)); }, {a}), 1e-4);

  auto gamma = random_tensor({4}, 5), beta = random_tensor({4}, 6);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::layer_norm(g, a, gamma, beta)); }, {a, gamma, beta}),
            1e-4);

  DropoutContext ctx{CounterRng(3), 2};
  EXPECT_LE(check([&](Graph<double>& g) {
              return reduce(g, ops::dropout(g, a, 0.3, Mode::kTrain, &ctx, 4, whole_sequence(3)));
            },
                  {a}),
            1e-4);

  auto x = random_tensor({7, 3}, 7), w = random_tensor({3, 3, 2}, 8), cb = random_tensor({2}, 9);
  Segments segs{{0, 3, 0}, {3, 4, 1}};
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::conv1d_causal(g, x, w, cb, 2, segs)); }, {x, w, cb}),
            1e-4);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::mean_pool_time(g, x, segs)); }, {x}), 1e-4);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::l2_normalize_rows(g, a)); }, {a}), 1e-4);
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::concat_cols(g, a, c)); }, {a, c}), 1e-4);

  auto q = random_tensor({5, 4}, 10), k = random_tensor({6, 4}, 11), v = random_tensor({6, 4}, 12);
  Segments qs{{0, 2, 0}, {2, 3, 1}}, ks{{0, 4, 0}, {4, 2, 1}};
  EXPECT_LE(check([&](Graph<double>& g) { return reduce(g, ops::attention(g, q, k, v, 2, qs, ks)); }, {q, k, v}),
            1e-4);
}
