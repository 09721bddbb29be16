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

#include "dataio/synth.hpp"

#include <algorithm>
#include <cstdio>

#include "common/errors.hpp"
#include "common/rng.hpp"

namespace mp4sr::data {

namespace {

std::string padded_id(char prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%05zu", prefix, n);
  return buf;
}

std::vector<float> noisy_rows(const std::vector<double>& base, std::size_t rows, double noise,
                              Rng& rng) {
  std::vector<float> out;
  out.reserve(rows * base.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (double b : base) out.push_back(static_cast<float>(b + noise * rng.normal()));
  return out;
}

}  // namespace

SynthData synth_generate(const SynthParams& p) {
  if (p.n_users < 10 || p.n_items < 10) throw ConfigError("synth: n_users and n_items must be >= 10");
  if (p.d < 8) throw ConfigError("synth: d must be >= 8");
  if (!(p.signal_strength >= 0.0 && p.signal_strength <= 1.0))
    throw ConfigError("synth: signal_strength must lie in [0, 1]");
  if (p.min_len < 3 || p.max_len < p.min_len || p.max_rows < 1 || p.max_rows > kMaxModalityRows ||
      p.cluster_size < 2)
    throw ConfigError("synth: invalid generator shape");

  SynthData out;
  out.num_clusters = std::max<std::size_t>(2, p.n_items / p.cluster_size);
  out.cluster_of.assign(p.n_items + 1, 0);
  std::vector<std::vector<ItemIndex>> members(out.num_clusters);
  for (std::size_t i = 1; i <= p.n_items; ++i) {
    out.cluster_of[i] = (i - 1) % out.num_clusters;
    members[out.cluster_of[i]].push_back(static_cast<ItemIndex>(i));
  }

  Rng feat_rng(derive_seed(p.seed, "synth.features"));
  auto centroid = [&] {
    std::vector<double> c(p.d);
    for (auto& v : c) v = feat_rng.normal();
    return c;
  };
  std::vector<std::vector<double>> text_centroid, image_centroid;
  for (std::size_t c = 0; c < out.num_clusters; ++c) {
    text_centroid.push_back(centroid());
    image_centroid.push_back(centroid());
  }
  out.features = FeatureStore(static_cast<std::uint32_t>(p.d));
  std::vector<std::string> item_ids(p.n_items + 1);
  for (std::size_t i = 1; i <= p.n_items; ++i) {
    item_ids[i] = padded_id('i', i);
    auto perturb = [&](const std::vector<double>& base) {
      std::vector<double> v = base;
      for (auto& x : v) x += p.item_spread * feat_rng.normal();
      return v;
    };
    const auto t = perturb(text_centroid[out.cluster_of[i]]);
    const auto v = perturb(image_centroid[out.cluster_of[i]]);
    ItemFeatures f;
    f.item_id = item_ids[i];
    f.n_text = static_cast<std::uint8_t>(1 + feat_rng.below(p.max_rows));
    f.n_image = static_cast<std::uint8_t>(1 + feat_rng.below(p.max_rows));
    f.text = noisy_rows(t, f.n_text, p.row_noise, feat_rng);
    f.image = noisy_rows(v, f.n_image, p.row_noise, feat_rng);
    out.features.add(std::move(f));
  }

  Rng walk_rng(derive_seed(p.seed, "synth.walks"));
  std::vector<Interaction> rows;
  for (std::size_t u = 0; u < p.n_users; ++u) {
    const std::string uid = padded_id('u', u);
    const std::size_t len = p.min_len + walk_rng.below(p.max_len - p.min_len + 1);
    auto item = static_cast<ItemIndex>(1 + walk_rng.below(p.n_items));
    const std::int64_t t0 = 1'600'000'000 + static_cast<std::int64_t>(walk_rng.below(1'000'000));
    for (std::size_t j = 0; j < len; ++j) {
      if (j > 0) {
        const auto& same = members[out.cluster_of[static_cast<std::size_t>(item)]];
        if (walk_rng.bernoulli(p.signal_strength)) {
          // Uniform over the other members of the current cluster.
          ItemIndex next = same[walk_rng.below(same.size() - 1)];
          if (next == item) next = same.back();
          item = next;
        } else {
          item = static_cast<ItemIndex>(1 + walk_rng.below(p.n_items));
        }
      }
      rows.push_back({uid, item_ids[static_cast<std::size_t>(item)],
                      t0 + static_cast<std::int64_t>(60 * j)});
    }
  }
  out.dataset = InteractionDataset::from_interactions(rows);

  // Dataset indices follow first appearance; re-key clusters to them.
  std::vector<std::size_t> cluster_by_index(out.dataset.num_items() + 1, 0);
  for (std::size_t i = 1; i <= p.n_items; ++i)
    if (auto idx = out.dataset.find_item(item_ids[i])) cluster_by_index[*idx] = out.cluster_of[i];
  out.cluster_of = std::move(cluster_by_index);
  return out;
}

}  // namespace mp4sr::data
