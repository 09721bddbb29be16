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

#include <cstdint>
#include <vector>

#include "m2se/checkpoint.hpp"
#include "m2se/model.hpp"

namespace mp4sr::train {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one buffer per parameter in
/// Model::parameters() order.
template <class Real>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<Real>> m, v;
};

/// One bias-corrected Adam update from the accumulated gradients. Entries
/// marked `decay` first shrink by lr * weight_decay (decoupled decay).
/// Throws NumericError naming the parameter when a gradient is not finite;
/// parameters are left untouched in that case.
template <class Real>
void adam_step(const std::vector<m2se::ParamEntry<Real>>& params, AdamState<Real>& state,
               double lr, double weight_decay, const AdamHyper& hyper = {});

template <class Real>
std::vector<m2se::StoredTensor> export_moments(const std::vector<m2se::ParamEntry<Real>>& params,
                                               const std::vector<std::vector<Real>>& moments);
/// Rebuilds moment buffers by parameter name; missing buffers raise
/// ContractError.
template <class Real>
std::vector<std::vector<Real>> import_moments(const std::vector<m2se::ParamEntry<Real>>& params,
                                              const std::vector<m2se::StoredTensor>& stored);

}  // namespace mp4sr::train
