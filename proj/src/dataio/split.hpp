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
#include <span>
#include <vector>

#include "common/rng.hpp"
#include "dataio/dataset.hpp"

namespace mp4sr::data {

inline constexpr std::size_t kMaxSeqLen = 50;

struct UserSplit {
  std::size_t user = 0;
  std::vector<ItemIndex> train;
  ItemIndex valid = kPad;
  ItemIndex test = kPad;
};

/// Leave-one-out split: last item is the test target, second-last the
/// validation target, the rest is training history.
struct SplitBundle {
  std::vector<UserSplit> users;
  std::size_t num_items = 0;
  /// Users with fewer than 3 interactions, left out of the split.
  std::size_t excluded_users = 0;
};

SplitBundle leave_one_out_split(const InteractionDataset& ds);

enum class Stage { kPretrain, kFinetune };

struct TrainingInstance {
  std::vector<ItemIndex> prefix;  // most recent <= max_len items, oldest first
  ItemIndex target = kPad;
};

/// One instance per next-item step of each user's training history:
/// (train[0..m), train[m]) for m = 1..n-1, prefixes cut to the last max_len
/// items. Both stages use the same construction.
std::vector<TrainingInstance> build_instances(const SplitBundle& split, Stage stage,
                                              std::size_t max_len = kMaxSeqLen);

/// Most recent max_len items of seq.
std::vector<ItemIndex> truncate_recent(std::span<const ItemIndex> seq,
                                       std::size_t max_len = kMaxSeqLen);

enum class EvalMode { kValid, kTest };

/// Evaluation inputs: validation ranks from the training history, test ranks
/// from training history plus the validation item; both truncated.
std::vector<TrainingInstance> evaluation_instances(const SplitBundle& split, EvalMode mode,
                                                   std::size_t max_len = kMaxSeqLen);

/// Right-aligned padded batch: row r occupies columns [max_len - len, max_len).
struct TrainingBatch {
  std::size_t size = 0;
  std::size_t max_len = kMaxSeqLen;
  std::vector<ItemIndex> items;      // size x max_len
  std::vector<std::uint8_t> is_pad;  // size x max_len
  std::vector<ItemIndex> targets;    // size

  ItemIndex at(std::size_t row, std::size_t col) const { return items[row * max_len + col]; }
  /// Prefix of row r without padding.
  std::vector<ItemIndex> prefix(std::size_t row) const;
};

TrainingBatch assemble_batch(std::span<const TrainingInstance* const> instances,
                             std::size_t max_len = kMaxSeqLen);

/// Drops leading columns that are padding in every row. Positions keep
/// their distance from the right edge.
TrainingBatch crop_leading_pad(const TrainingBatch& batch);

/// Shuffles a copy of the instance order with rng and cuts it into batches;
/// the last partial batch is kept.
std::vector<TrainingBatch> make_batches(const std::vector<TrainingInstance>& instances,
                                        std::size_t batch_size, Rng& rng,
                                        std::size_t max_len = kMaxSeqLen);

struct ItemPartition {
  std::vector<ItemIndex> cold;
  std::vector<ItemIndex> warm;
  std::vector<std::uint8_t> is_cold;  // indexed by item, entry 0 unused
};

/// Items seen fewer than threshold times in the training histories are cold.
ItemPartition cold_item_partition(const SplitBundle& split, std::size_t threshold = 10);

}  // namespace mp4sr::data
