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

#include "dataio/split.hpp"

#include <numeric>

#include "common/errors.hpp"

namespace mp4sr::data {

SplitBundle leave_one_out_split(const InteractionDataset& ds) {
  SplitBundle out;
  out.num_items = ds.num_items();
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    const auto& seq = ds.sequence(u);
    if (seq.size() < 3) {
      ++out.excluded_users;
      continue;
    }
    UserSplit s;
    s.user = u;
    s.train.assign(seq.begin(), seq.end() - 2);
    s.valid = seq[seq.size() - 2];
    s.test = seq.back();
    out.users.push_back(std::move(s));
  }
  return out;
}

std::vector<ItemIndex> truncate_recent(std::span<const ItemIndex> seq, std::size_t max_len) {
  const std::size_t start = seq.size() > max_len ? seq.size() - max_len : 0;
  return {seq.begin() + static_cast<std::ptrdiff_t>(start), seq.end()};
}

std::vector<TrainingInstance> build_instances(const SplitBundle& split, Stage /*stage*/,
                                              std::size_t max_len) {
  std::vector<TrainingInstance> out;
  for (const auto& u : split.users) {
    for (std::size_t m = 1; m < u.train.size(); ++m) {
      out.push_back({truncate_recent(std::span(u.train).first(m), max_len), u.train[m]});
    }
  }
  return out;
}

std::vector<TrainingInstance> evaluation_instances(const SplitBundle& split, EvalMode mode,
                                                   std::size_t max_len) {
  std::vector<TrainingInstance> out;
  out.reserve(split.users.size());
  for (const auto& u : split.users) {
    if (mode == EvalMode::kValid) {
      out.push_back({truncate_recent(u.train, max_len), u.valid});
    } else {
      std::vector<ItemIndex> seq = u.train;
      seq.push_back(u.valid);
      out.push_back({truncate_recent(seq, max_len), u.test});
    }
  }
  return out;
}

std::vector<ItemIndex> TrainingBatch::prefix(std::size_t row) const {
  std::vector<ItemIndex> out;
  for (std::size_t c = 0; c < max_len; ++c)
    if (!is_pad[row * max_len + c]) out.push_back(items[row * max_len + c]);
  return out;
}

TrainingBatch assemble_batch(std::span<const TrainingInstance* const> instances,
                             std::size_t max_len) {
  if (instances.empty()) throw ContractError("assemble_batch: empty batch");
  TrainingBatch b;
  b.size = instances.size();
  b.max_len = max_len;
  b.items.assign(b.size * max_len, kPad);
  b.is_pad.assign(b.size * max_len, 1);
  b.targets.reserve(b.size);
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto& inst = *instances[r];
    if (inst.target == kPad) throw ContractError("assemble_batch: pad target");
    if (inst.prefix.empty() || inst.prefix.size() > max_len) {
      throw ContractError("assemble_batch: prefix length " + std::to_string(inst.prefix.size()) +
                          " outside [1, " + std::to_string(max_len) + "]");
    }
    const std::size_t offset = max_len - inst.prefix.size();
    for (std::size_t j = 0; j < inst.prefix.size(); ++j) {
      b.items[r * max_len + offset + j] = inst.prefix[j];
      b.is_pad[r * max_len + offset + j] = 0;
    }
    b.targets.push_back(inst.target);
  }
  return b;
}

TrainingBatch crop_leading_pad(const TrainingBatch& batch) {
  std::size_t first = batch.max_len;
  for (std::size_t r = 0; r < batch.size; ++r)
    for (std::size_t c = 0; c < first; ++c)
      if (!batch.is_pad[r * batch.max_len + c]) {
        first = c;
        break;
      }
  TrainingBatch out;
  out.size = batch.size;
  out.max_len = batch.max_len - first;
  out.targets = batch.targets;
  for (std::size_t r = 0; r < batch.size; ++r) {
    const auto row = static_cast<std::ptrdiff_t>(r * batch.max_len + first);
    const auto end = static_cast<std::ptrdiff_t>((r + 1) * batch.max_len);
    out.items.insert(out.items.end(), batch.items.begin() + row, batch.items.begin() + end);
    out.is_pad.insert(out.is_pad.end(), batch.is_pad.begin() + row, batch.is_pad.begin() + end);
  }
  return out;
}

std::vector<TrainingBatch> make_batches(const std::vector<TrainingInstance>& instances,
                                        std::size_t batch_size, Rng& rng, std::size_t max_len) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<TrainingBatch> out;
  std::vector<const TrainingInstance*> chunk;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    chunk.clear();
    for (std::size_t j = start; j < std::min(order.size(), start + batch_size); ++j)
      chunk.push_back(&instances[order[j]]);
    out.push_back(assemble_batch(chunk, max_len));
  }
  return out;
}

ItemPartition cold_item_partition(const SplitBundle& split, std::size_t threshold) {
  std::vector<std::size_t> count(split.num_items + 1, 0);
  for (const auto& u : split.users)
    for (ItemIndex i : u.train) ++count[static_cast<std::size_t>(i)];
  ItemPartition p;
  p.is_cold.assign(split.num_items + 1, 0);
  for (std::size_t i = 1; i <= split.num_items; ++i) {
    if (count[i] < threshold) {
      p.is_cold[i] = 1;
      p.cold.push_back(static_cast<ItemIndex>(i));
    } else {
      p.warm.push_back(static_cast<ItemIndex>(i));
    }
  }
  return p;
}

}  // namespace mp4sr::data
