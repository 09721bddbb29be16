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

#include "dataio/dataset.hpp"
#include "dataio/feature_store.hpp"

namespace mp4sr::data {

struct SynthParams {
  std::size_t n_users = 200;
  std::size_t n_items = 50;
  std::size_t d = 32;
  double signal_strength = 0.9;
  std::uint64_t seed = 0;
  // Generator shape; not part of the config surface.
  std::size_t cluster_size = 10;
  std::size_t min_len = 5;
  std::size_t max_len = 14;
  std::size_t max_rows = 3;
  double item_spread = 0.5;
  double row_noise = 0.3;
};

struct SynthData {
  InteractionDataset dataset;
  FeatureStore features;
  /// Latent cluster of each item index (entry 0 unused).
  std::vector<std::size_t> cluster_of;
  std::size_t num_clusters = 0;
};

/// Planted-signal dataset: items fall into latent clusters and each user
/// walks within the current item's cluster with probability signal_strength,
/// otherwise jumps to a uniformly random item. Text and image rows of an
/// item are noisy copies of per-cluster, per-modality centroids, so both
/// modalities predict the continuation.
SynthData synth_generate(const SynthParams& params);

}  // namespace mp4sr::data
