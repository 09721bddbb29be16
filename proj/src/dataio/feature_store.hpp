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
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dataio/dataset.hpp"

namespace mp4sr::data {

inline constexpr std::size_t kMaxModalityRows = 10;

/// Stacked sentence-level features of one item: text is n_text x dim and
/// image is n_image x dim, row-major.
struct ItemFeatures {
  std::string item_id;
  std::uint8_t n_text = 0;
  std::uint8_t n_image = 0;
  std::vector<float> text;
  std::vector<float> image;
};

class FeatureStore {
 public:
  explicit FeatureStore(std::uint32_t dim = 768) : dim_(dim) {}

  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return items_.size(); }
  const std::vector<ItemFeatures>& items() const { return items_; }

  /// Validates row counts, row lengths and finiteness; throws FormatError.
  void add(ItemFeatures item);
  const ItemFeatures* find(const std::string& item_id) const;

 private:
  std::uint32_t dim_;
  std::vector<ItemFeatures> items_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Binary layout (little-endian):
///   "MP4SRFS1" | u32 version=1 | u32 item_count | u32 dim
///   per item: u16 id_len | id bytes | u8 n_text | u8 n_image
///             | n_text*dim f32 | n_image*dim f32
FeatureStore load_feature_store(const std::filesystem::path& path);
void write_feature_store(const FeatureStore& store, const std::filesystem::path& path);
/// Exact size in bytes of the serialised store.
std::uint64_t feature_store_bytes(const FeatureStore& store);

/// Features aligned to a dataset's item indices, rows of each item
/// contiguous. Entry 0 (pad) is empty.
class FeatureBank {
 public:
  FeatureBank() = default;
  /// Throws DataError naming the first dataset item absent from the store.
  FeatureBank(const InteractionDataset& ds, const FeatureStore& store);

  std::size_t dim() const { return dim_; }
  std::size_t num_items() const { return text_rows_.size() - 1; }
  std::size_t rows(ItemIndex i, bool image) const {
    return (image ? image_rows_ : text_rows_).at(static_cast<std::size_t>(i));
  }
  /// rows(i) x dim block for item i.
  std::span<const float> features(ItemIndex i, bool image) const;

  /// Replaces one item's block (same row count); used by perturbation tests.
  void set_features(ItemIndex i, bool image, std::span<const float> values);

 private:
  std::size_t dim_ = 0;
  std::vector<float> text_, image_;
  std::vector<std::size_t> text_offset_{0}, image_offset_{0};
  std::vector<std::size_t> text_rows_{0}, image_rows_{0};
};

}  // namespace mp4sr::data
