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

#include <cstddef>
#include <string>

#include "dataio/dataset.hpp"
#include "dataio/split.hpp"

namespace mp4sr::data {

/// Deterministic JSON summary of a filtered dataset and its leave-one-out
/// split: counts only, keys in fixed order.
std::string split_manifest_json(const InteractionDataset& ds, const SplitBundle& split,
                                std::size_t kcore);

}  // namespace mp4sr::data
