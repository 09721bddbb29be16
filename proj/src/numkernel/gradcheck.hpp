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

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "numkernel/graph.hpp"

namespace mp4sr::nk {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

using ScalarMap = std::function<Tensor<double>(Graph<double>&)>;

/// Compares the recorded gradient of f against central differences for every
/// coordinate of every tensor in params (which must require gradients).
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|).
/// f must be deterministic: reseed any Rng it uses on every call.
GradCheckReport gradient_check(const ScalarMap& f, std::vector<Tensor<double>> params,
                               double eps = 1e-5);

/// Single-point form: f maps a vector tensor x to a scalar.
double gradient_check(const std::function<Tensor<double>(Graph<double>&, const Tensor<double>&)>& f,
                      const std::vector<double>& point, double eps = 1e-5);

}  // namespace mp4sr::nk
