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

#include "trainer/adam.hpp"

#include <cmath>
#include <map>

#include "common/errors.hpp"

namespace mp4sr::train {

template <class Real>
void adam_step(const std::vector<m2se::ParamEntry<Real>>& params, AdamState<Real>& state,
               double lr, double weight_decay, const AdamHyper& hyper) {
  for (const auto& p : params) {
    for (Real gv : p.tensor.grad()) {
      if (!std::isfinite(gv)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), Real(0));
      state.v.emplace_back(p.tensor.numel(), Real(0));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: parameter count changed");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = m2se::T<Real>(params[k].tensor);
    auto val = w.data();
    auto grad = w.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    const double shrink = params[k].decay ? 1.0 - lr * weight_decay : 1.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double g = grad[i];
      m[i] = static_cast<Real>(hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g);
      v[i] = static_cast<Real>(hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g);
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + hyper.eps);
      val[i] = static_cast<Real>(val[i] * shrink - lr * update);
    }
  }
}

template <class Real>
std::vector<m2se::StoredTensor> export_moments(const std::vector<m2se::ParamEntry<Real>>& params,
                                               const std::vector<std::vector<Real>>& moments) {
  std::vector<m2se::StoredTensor> out;
  for (std::size_t k = 0; k < moments.size(); ++k)
    out.push_back({params[k].name, params[k].tensor.shape(),
                   std::vector<float>(moments[k].begin(), moments[k].end())});
  return out;
}

template <class Real>
std::vector<std::vector<Real>> import_moments(const std::vector<m2se::ParamEntry<Real>>& params,
                                              const std::vector<m2se::StoredTensor>& stored) {
  if (stored.empty()) return {};
  std::map<std::string, const m2se::StoredTensor*> by_name;
  for (const auto& s : stored) by_name[s.name] = &s;
  std::vector<std::vector<Real>> out;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end() || it->second->values.size() != p.tensor.numel())
      throw ContractError("optimizer state lacks a matching buffer for '" + p.name + "'");
    out.emplace_back(it->second->values.begin(), it->second->values.end());
  }
  return out;
}

#define MP4SR_ADAM_INSTANTIATE(R)                                                              \
  template void adam_step<R>(const std::vector<m2se::ParamEntry<R>>&, AdamState<R>&, double,    \
                             double, const AdamHyper&);                                         \
  template std::vector<m2se::StoredTensor> export_moments<R>(                                   \
      const std::vector<m2se::ParamEntry<R>>&, const std::vector<std::vector<R>>&);             \
  template std::vector<std::vector<R>> import_moments<R>(const std::vector<m2se::ParamEntry<R>>&, \
                                                         const std::vector<m2se::StoredTensor>&);

MP4SR_ADAM_INSTANTIATE(float)
MP4SR_ADAM_INSTANTIATE(double)

}  // namespace mp4sr::train
