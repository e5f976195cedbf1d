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

#include "mmfer/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "mmfer/rng.hpp"

namespace mmfer {

GradCheckResult grad_check(const std::function<Tensor<double>(Graph<double>&)>& f,
                           const std::vector<Tensor<double>>& params, const GradCheckOptions& options) {
  std::vector<Tensor<double>> ps = params;
  for (auto& p : ps) {
    if (!p.requires_grad()) p.set_requires_grad(true);
    p.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Graph<double> g;
    Tensor<double> loss = f(g);
    if (loss.numel() != 1) {
      throw ContractError("grad_check needs a scalar function, got shape " + shape_to_string(loss.shape()));
    }
    g.backward(loss);
    for (auto& p : ps) analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  std::vector<std::pair<size_t, int64_t>> coords;
  for (size_t i = 0; i < ps.size(); ++i) {
    for (int64_t e = 0; e < ps[i].numel(); ++e) coords.emplace_back(i, e);
  }
  const size_t budget = std::max<size_t>(options.max_coordinates, 100);
  if (coords.size() > budget) {
    SeededStream rng(options.seed);
    rng.shuffle(coords);
    coords.resize(budget);
    std::sort(coords.begin(), coords.end());
  }

  auto eval = [&f]() {
    Graph<double> g(false);
    Tensor<double> v = f(g);
    if (v.numel() != 1) throw ContractError("grad_check needs a scalar function");
    return v.item();
  };

  GradCheckResult result;
  const double h = options.step;
  for (const auto& [pi, e] : coords) {
    Tensor<double>& p = ps[pi];
    const double saved = p[e];
    p[e] = saved + h;
    const double up = eval();
    p[e] = saved - h;
    const double down = eval();
    p[e] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double ga = analytic[pi][static_cast<size_t>(e)];
    const double rel = std::abs(ga - numeric) / std::max({1.0, std::abs(ga), std::abs(numeric)});
    if (rel > result.max_rel_error || std::isnan(rel)) {
      result.max_rel_error = std::isnan(rel) ? INFINITY : rel;
      result.worst_param = pi;
      result.worst_element = e;
    }
    ++result.coordinates_checked;
  }
  return result;
}

}  // namespace mmfer
