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

#include "dataio/manifest.hpp"

#include "json.hpp"

namespace mp4sr::data {

std::string split_manifest_json(const InteractionDataset& ds, const SplitBundle& split,
                                std::size_t kcore) {
  std::size_t train = 0;
  for (const auto& u : split.users) train += u.train.size();
  nlohmann::ordered_json j;
  j["kcore"] = kcore;
  j["users"] = ds.num_users();
  j["items"] = ds.num_items();
  j["interactions"] = ds.num_interactions();
  j["split_users"] = split.users.size();
  j["excluded_users"] = split.excluded_users;
  j["train_interactions"] = train;
  j["valid_targets"] = split.users.size();
  j["test_targets"] = split.users.size();
  return j.dump(2) + "\n";
}

}  // namespace mp4sr::data
