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
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mp4sr::data {

/// Item indices are 1-based; 0 is the reserved padding index.
using ItemIndex = std::int32_t;
inline constexpr ItemIndex kPad = 0;

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

/// Per-user chronologically ordered item sequences.
///
/// Users are indexed 0..U-1 and items 1..N, both in order of first
/// appearance in the source. item_ids[0] is the empty pad id.
class InteractionDataset {
 public:
  InteractionDataset() : item_ids_{""} {}

  /// Groups interactions by user and stable-sorts each user's events by
  /// timestamp, so ties keep input order. Duplicates are kept.
  static InteractionDataset from_interactions(const std::vector<Interaction>& rows);

  std::size_t num_users() const { return user_ids_.size(); }
  std::size_t num_items() const { return item_ids_.size() - 1; }
  std::size_t num_interactions() const;
  double average_length() const;

  const std::string& user_id(std::size_t u) const { return user_ids_.at(u); }
  const std::string& item_id(ItemIndex i) const { return item_ids_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  std::optional<ItemIndex> find_item(const std::string& id) const;

  const std::vector<ItemIndex>& sequence(std::size_t u) const { return sequences_.at(u); }
  const std::vector<std::int64_t>& timestamps(std::size_t u) const { return timestamps_.at(u); }
  const std::vector<std::vector<ItemIndex>>& sequences() const { return sequences_; }

  /// Flattened back to rows, users in index order, events in sequence order.
  std::vector<Interaction> to_interactions() const;

 private:
  friend InteractionDataset kcore_filter(const InteractionDataset&, std::size_t);

  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
  std::unordered_map<std::string, ItemIndex> item_lookup_;
  std::vector<std::vector<ItemIndex>> sequences_;
  std::vector<std::vector<std::int64_t>> timestamps_;
};

/// Reads a UTF-8 TSV with header `user_id\titem_id\ttimestamp`.
/// Throws IoError, ParseError (with line number) or EmptyDatasetError.
InteractionDataset load_interactions(const std::filesystem::path& path);
void write_interactions(const InteractionDataset& ds, const std::filesystem::path& path);

/// Iteratively drops users and items with fewer than k interactions until a
/// fixed point; surviving users and items are re-indexed in their original
/// relative order. Throws EmptyDatasetError if nothing survives.
InteractionDataset kcore_filter(const InteractionDataset& ds, std::size_t k);

}  // namespace mp4sr::data
