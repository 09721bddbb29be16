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

#include "dataio/feature_store.hpp"

#include <cmath>

#include "common/binio.hpp"
#include "common/errors.hpp"

namespace mp4sr::data {

namespace {

constexpr char kMagic[8] = {'M', 'P', '4', 'S', 'R', 'F', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

void check_block(const std::string& id, std::string_view what, std::size_t n,
                 const std::vector<float>& values, std::uint32_t dim) {
  if (n < 1 || n > kMaxModalityRows) {
    throw FormatError("item '" + id + "': " + std::string(what) + " row count " +
                      std::to_string(n) + " outside [1, 10]");
  }
  if (values.size() != n * dim) {
    throw FormatError("item '" + id + "': " + std::string(what) + " block has " +
                      std::to_string(values.size()) + " values, expected " +
                      std::to_string(n * dim));
  }
  for (float v : values)
    if (!std::isfinite(v))
      throw FormatError("item '" + id + "': non-finite " + std::string(what) + " feature");
}

}  // namespace

void FeatureStore::add(ItemFeatures item) {
  if (item.item_id.empty() || item.item_id.size() > 0xFFFF)
    throw FormatError("item id length must be in [1, 65535]");
  check_block(item.item_id, "text", item.n_text, item.text, dim_);
  check_block(item.item_id, "image", item.n_image, item.image, dim_);
  if (!lookup_.emplace(item.item_id, items_.size()).second)
    throw FormatError("duplicate item '" + item.item_id + "' in feature store");
  items_.push_back(std::move(item));
}

const ItemFeatures* FeatureStore::find(const std::string& item_id) const {
  auto it = lookup_.find(item_id);
  return it == lookup_.end() ? nullptr : &items_[it->second];
}

std::uint64_t feature_store_bytes(const FeatureStore& store) {
  std::uint64_t n = sizeof(kMagic) + 4 + 4 + 4;
  for (const auto& it : store.items())
    n += 2 + it.item_id.size() + 2 + 4ull * store.dim() * (it.n_text + it.n_image);
  return n;
}

void write_feature_store(const FeatureStore& store, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(store.size()));
  w.u32(store.dim());
  for (const auto& it : store.items()) {
    w.u16(static_cast<std::uint16_t>(it.item_id.size()));
    w.bytes(it.item_id);
    w.u8(it.n_text);
    w.u8(it.n_image);
    for (float v : it.text) w.f32(v);
    for (float v : it.image) w.f32(v);
  }
  write_file(path, w.str());
}

FeatureStore load_feature_store(const std::filesystem::path& path) {
  ByteReader r(read_file(path), "feature store");
  r.context = " (header)";
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic)))
    throw FormatError("not a feature store (bad magic): " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError("unsupported feature store version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  if (dim == 0) throw FormatError("feature store dimension is zero");
  FeatureStore store(dim);
  for (std::uint32_t k = 0; k < count; ++k) {
    r.context = " in item #" + std::to_string(k);
    ItemFeatures it;
    const std::uint16_t len = r.u16();
    it.item_id = std::string(r.bytes(len));
    r.context = " in item '" + it.item_id + "'";
    it.n_text = r.u8();
    it.n_image = r.u8();
    if (it.n_text == 0 || it.n_image == 0) {
      throw FormatError("item '" + it.item_id + "' is missing its " +
                        (it.n_text == 0 ? "text" : "image") + " modality");
    }
    if (it.n_text > kMaxModalityRows || it.n_image > kMaxModalityRows)
      throw FormatError("item '" + it.item_id + "' has more than 10 rows in a modality");
    it.text.resize(std::size_t{it.n_text} * dim);
    it.image.resize(std::size_t{it.n_image} * dim);
    for (auto& v : it.text) v = r.f32();
    for (auto& v : it.image) v = r.f32();
    store.add(std::move(it));
  }
  if (!r.done()) throw FormatError("trailing bytes after last item in " + path.string());
  return store;
}

FeatureBank::FeatureBank(const InteractionDataset& ds, const FeatureStore& store)
    : dim_(store.dim()) {
  for (ItemIndex i = 1; i <= static_cast<ItemIndex>(ds.num_items()); ++i) {
    const ItemFeatures* f = store.find(ds.item_id(i));
    if (!f) throw DataError("item '" + ds.item_id(i) + "' has no features in the store");
    text_.insert(text_.end(), f->text.begin(), f->text.end());
    image_.insert(image_.end(), f->image.begin(), f->image.end());
    text_offset_.push_back(text_offset_.back() + text_rows_.back() * dim_);
    image_offset_.push_back(image_offset_.back() + image_rows_.back() * dim_);
    text_rows_.push_back(f->n_text);
    image_rows_.push_back(f->n_image);
  }
}

std::span<const float> FeatureBank::features(ItemIndex i, bool image) const {
  const auto k = static_cast<std::size_t>(i);
  if (i <= kPad || k > num_items()) throw DataError("no features for item index " + std::to_string(i));
  const auto& store = image ? image_ : text_;
  const std::size_t off = (image ? image_offset_ : text_offset_)[k];
  return std::span<const float>(store).subspan(off, rows(i, image) * dim_);
}

void FeatureBank::set_features(ItemIndex i, bool image, std::span<const float> values) {
  auto block = features(i, image);
  if (values.size() != block.size()) throw DimensionError("set_features: size mismatch");
  auto& store = image ? image_ : text_;
  const std::size_t off = (image ? image_offset_ : text_offset_)[static_cast<std::size_t>(i)];
  std::copy(values.begin(), values.end(), store.begin() + static_cast<std::ptrdiff_t>(off));
}

}  // namespace mp4sr::data
