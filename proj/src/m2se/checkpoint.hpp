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

#include <filesystem>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "m2se/model.hpp"

namespace mp4sr::m2se {

/// A named float32 array as stored on disk.
struct StoredTensor {
  std::string name;
  nk::Shape shape;
  std::vector<float> values;
};

/// Everything needed to resume or transfer a run. Layout is documented in
/// docs/checkpoint_format.md.
struct Checkpoint {
  std::string config_json;  // echo of the run configuration
  std::uint64_t epoch = 0;
  double best_metric = 0.0;
  std::vector<Rng::State> rng_states;
  std::vector<StoredTensor> params;
  // Optimizer state; empty when absent.
  std::uint64_t adam_step = 0;
  std::vector<StoredTensor> adam_m, adam_v;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
/// Throws FormatError on bad magic, unknown version, truncation or
/// trailing bytes; IoError when unreadable.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshots the model parameter values as float32.
template <class Real>
std::vector<StoredTensor> export_tensors(const Model<Real>& m);

/// Writes stored values into the model. Every model parameter must be
/// present with a matching shape (ContractError otherwise); unknown names
/// are rejected too.
template <class Real>
void import_tensors(Model<Real>& m, const std::vector<StoredTensor>& tensors);

}  // namespace mp4sr::m2se
