// Copyright 2026 The MP4SR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "numkernel/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mp4sr::nk {

namespace {

double evaluate(const ScalarMap& f) {
  Graph<double> g(false);
  return f(g).item();
}

}  // namespace

GradCheckReport gradient_check(const ScalarMap& f, std::vector<Tensor<double>> params, double eps) {
  if (!(eps > 0.0)) throw ConfigError("gradient_check: eps must be positive");
  for (auto& p : params) {
    if (!p.requires_grad()) throw ContractError("gradient_check: parameter without gradient");
    p.zero_grad();
  }
  {
    Graph<double> g;
    g.backward(f(g));
  }
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + eps;
      const double up = evaluate(f);
      p.data()[i] = saved - eps;
      const double down = evaluate(f);
      p.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = pi;
        report.worst_index = i;
      }
    }
  }
  return report;
}

double gradient_check(const std::function<Tensor<double>(Graph<double>&, const Tensor<double>&)>& f,
                      const std::vector<double>& point, double eps) {
  auto x = Tensor<double>::from(Shape{point.size()}, point, true);
  return gradient_check([&](Graph<double>& g) { return f(g, x); }, {x}, eps).max_rel_error;
}

}  // namespace mp4sr::nk
