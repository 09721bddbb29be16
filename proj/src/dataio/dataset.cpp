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

#include "dataio/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <string_view>

#include "common/errors.hpp"

namespace mp4sr::data {

InteractionDataset InteractionDataset::from_interactions(const std::vector<Interaction>& rows) {
  InteractionDataset ds;
  std::unordered_map<std::string, std::size_t> user_lookup;
  std::vector<std::vector<std::size_t>> rows_of_user;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto [uit, new_user] = user_lookup.try_emplace(row.user_id, ds.user_ids_.size());
    if (new_user) {
      ds.user_ids_.push_back(row.user_id);
      rows_of_user.emplace_back();
    }
    rows_of_user[uit->second].push_back(r);
    auto [iit, new_item] =
        ds.item_lookup_.try_emplace(row.item_id, static_cast<ItemIndex>(ds.item_ids_.size()));
    if (new_item) ds.item_ids_.push_back(row.item_id);
  }
  ds.sequences_.resize(ds.user_ids_.size());
  ds.timestamps_.resize(ds.user_ids_.size());
  for (std::size_t u = 0; u < rows_of_user.size(); ++u) {
    auto& idx = rows_of_user[u];
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return rows[a].timestamp < rows[b].timestamp;
    });
    for (std::size_t r : idx) {
      ds.sequences_[u].push_back(ds.item_lookup_.at(rows[r].item_id));
      ds.timestamps_[u].push_back(rows[r].timestamp);
    }
  }
  return ds;
}

std::size_t InteractionDataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& s : sequences_) n += s.size();
  return n;
}

double InteractionDataset::average_length() const {
  return num_users() ? static_cast<double>(num_interactions()) / static_cast<double>(num_users())
                     : 0.0;
}

std::optional<ItemIndex> InteractionDataset::find_item(const std::string& id) const {
  auto it = item_lookup_.find(id);
  if (it == item_lookup_.end()) return std::nullopt;
  return it->second;
}

std::vector<Interaction> InteractionDataset::to_interactions() const {
  std::vector<Interaction> rows;
  rows.reserve(num_interactions());
  for (std::size_t u = 0; u < num_users(); ++u)
    for (std::size_t j = 0; j < sequences_[u].size(); ++j)
      rows.push_back({user_ids_[u], item_id(sequences_[u][j]), timestamps_[u][j]});
  return rows;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

InteractionDataset load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open interactions file: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::vector<Interaction> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
        line.erase(0, 3);
      if (line != "user_id\titem_id\ttimestamp") {
        throw ParseError("expected header 'user_id<TAB>item_id<TAB>timestamp' in " + path.string(),
                         lineno);
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw ParseError("expected 3 tab-separated fields, found " + std::to_string(fields.size()),
                       lineno);
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError("empty user or item id", lineno);
    std::int64_t ts = 0;
    auto [ptr, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), ts);
    if (ec != std::errc() || ptr != fields[2].data() + fields[2].size()) {
      throw ParseError("timestamp is not an integer: '" + std::string(fields[2]) + "'", lineno);
    }
    if (ts < 0) throw ParseError("negative timestamp", lineno);
    rows.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  if (rows.empty()) throw EmptyDatasetError("no interactions in " + path.string());
  return InteractionDataset::from_interactions(rows);
}

void write_interactions(const InteractionDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write interactions file: " + path.string());
  out << "user_id\titem_id\ttimestamp\n";
  for (const auto& r : ds.to_interactions())
    out << r.user_id << '\t' << r.item_id << '\t' << r.timestamp << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

InteractionDataset kcore_filter(const InteractionDataset& ds, std::size_t k) {
  if (k < 1) throw ConfigError("k-core requires k >= 1");
  const std::size_t n_users = ds.num_users(), n_items = ds.num_items();
  std::vector<std::uint8_t> user_alive(n_users, 1), item_alive(n_items + 1, 1);
  item_alive[kPad] = 0;
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<std::size_t> user_count(n_users, 0), item_count(n_items + 1, 0);
    for (std::size_t u = 0; u < n_users; ++u) {
      if (!user_alive[u]) continue;
      for (ItemIndex i : ds.sequences_[u]) {
        if (!item_alive[i]) continue;
        ++user_count[u];
        ++item_count[i];
      }
    }
    for (std::size_t u = 0; u < n_users; ++u) {
      if (user_alive[u] && user_count[u] < k) {
        user_alive[u] = 0;
        changed = true;
      }
    }
    for (std::size_t i = 1; i <= n_items; ++i) {
      if (item_alive[i] && item_count[i] < k) {
        item_alive[i] = 0;
        changed = true;
      }
    }
  }

  InteractionDataset out;
  std::vector<ItemIndex> remap(n_items + 1, kPad);
  for (std::size_t i = 1; i <= n_items; ++i) {
    if (!item_alive[i]) continue;
    remap[i] = static_cast<ItemIndex>(out.item_ids_.size());
    out.item_lookup_.emplace(ds.item_ids_[i], remap[i]);
    out.item_ids_.push_back(ds.item_ids_[i]);
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    if (!user_alive[u]) continue;
    std::vector<ItemIndex> seq;
    std::vector<std::int64_t> ts;
    for (std::size_t j = 0; j < ds.sequences_[u].size(); ++j) {
      const ItemIndex i = ds.sequences_[u][j];
      if (!item_alive[i]) continue;
      seq.push_back(remap[i]);
      ts.push_back(ds.timestamps_[u][j]);
    }
    out.user_ids_.push_back(ds.user_ids_[u]);
    out.sequences_.push_back(std::move(seq));
    out.timestamps_.push_back(std::move(ts));
  }
  if (out.num_users() == 0 || out.num_items() == 0) {
    throw EmptyDatasetError("k-core filtering with k=" + std::to_string(k) + " removed every user");
  }
  return out;
}

}  // namespace mp4sr::data
