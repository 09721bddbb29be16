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

#include <optional>
#include <span>
#include <vector>

#include "common/rng.hpp"
#include "dataio/feature_store.hpp"
#include "dataio/split.hpp"
#include "m2se/model.hpp"
#include "numkernel/graph.hpp"

namespace mp4sr::m2se {

using data::ItemIndex;

/// Drops each item independently with probability rho, keeping order. When
/// every item is dropped the most recent one is kept.
std::vector<ItemIndex> sequence_dropout(std::span<const ItemIndex> prefix, double rho, Rng& rng);

/// Feature rows of n items for one modality, zero-padded to the largest row
/// count: x is [n, R, d] and rows marks real rows.
template <class Real>
struct ItemFeatureBlock {
  T<Real> x;
  nk::Mask rows;
};

template <class Real>
ItemFeatureBlock<Real> gather_features(const data::FeatureBank& bank,
                                       std::span<const ItemIndex> items, bool image);

template <class Real>
struct EncoderActivations {
  T<Real> alpha;    // [n, R] attention weights, zero on padded rows
  T<Real> e;        // [n, d] pooled features
  T<Real> gate;     // [n, O]
  T<Real> experts;  // [n, O, d_0]
  T<Real> z;        // [n, d_0]
};

/// Attention pooling of each item's rows; fills alpha and e.
template <class Real>
void attention_pool(nk::Graph<Real>& g, const ItemFeatureBlock<Real>& block,
                    const ModalityEncoderParams<Real>& p, EncoderActivations<Real>& out);

/// Dense mixture of experts on out.e; fills gate, experts and z.
template <class Real>
void moe_forward(nk::Graph<Real>& g, const ModalityEncoderParams<Real>& p, double dropout,
                 Rng& rng, bool training, EncoderActivations<Real>& out);

/// attention_pool followed by moe_forward for each listed item.
template <class Real>
EncoderActivations<Real> encode_items(nk::Graph<Real>& g, const ModalityEncoderParams<Real>& p,
                                      const data::FeatureBank& bank,
                                      std::span<const ItemIndex> items, bool image,
                                      double dropout, Rng& rng, bool training);

/// Encodings of a set of distinct items in both modalities. slot[i] is the
/// row of item i, or -1 when the item was not encoded.
template <class Real>
struct ItemTable {
  T<Real> text, image;  // [n, d_0]
  std::vector<std::int64_t> slot;
  std::vector<ItemIndex> items;
};

/// Encodes `items` (distinct, non-pad) with the model's two encoders; text
/// draws its dropout masks before image.
template <class Real>
ItemTable<Real> make_item_table(nk::Graph<Real>& g, const Model<Real>& m,
                                const data::FeatureBank& bank, std::vector<ItemIndex> items,
                                Rng& rng, bool training);

/// Every catalog item, item i in row i - 1.
template <class Real>
ItemTable<Real> make_catalog_table(nk::Graph<Real>& g, const Model<Real>& m,
                                   const data::FeatureBank& bank, Rng& rng, bool training);

/// Distinct non-pad items of a batch, its targets included.
std::vector<ItemIndex> batch_items(const data::TrainingBatch& batch);

template <class Real>
struct MixupResult {
  T<Real> m_text, m_image;
  nk::Mask swap;  // per row: 1 when the two modalities were exchanged
  double p = 0.0;
};

/// Exchanges rows of z_text and z_image where a Bernoulli(p) mask is set,
/// p ~ U[0, p_max] drawn once per call. Pad rows never swap. Inactive mixup
/// is the identity with p = 0. forced_p replaces the drawn ratio.
template <class Real>
MixupResult<Real> complementary_mixup(nk::Graph<Real>& g, const T<Real>& z_text,
                                      const T<Real>& z_image, const nk::Mask& is_pad, bool active,
                                      Rng& rng, std::optional<double> forced_p = std::nullopt,
                                      double p_max = 0.5);

template <class Real>
struct TransformerOutput {
  T<Real> hidden;  // [B, W, d_0] after the final layer norm
  T<Real> h;       // [B, d_0], last position
};

/// Pre-norm Transformer over right-aligned rows. x is [B, W, d_0] with
/// W <= max_len; column c uses position row max_len - W + c. Attention is
/// causal and never attends to pad columns.
template <class Real>
TransformerOutput<Real> transformer_encode(nk::Graph<Real>& g, const TransformerParams<Real>& p,
                                           const T<Real>& x, const nk::Mask& is_pad,
                                           std::size_t heads, double dropout, Rng& rng,
                                           bool training);

template <class Real>
struct SequenceActivations {
  T<Real> z_text, z_image;  // [B*W, d_0]
  nk::Mask swap;
  double p = 0.0;
  T<Real> m_text, m_image;  // [B*W, d_0]
  TransformerOutput<Real> text, image;
};

struct ForwardOptions {
  data::Stage stage = data::Stage::kPretrain;
  bool training = true;
  bool mixup = true;  // pre-training only
  std::optional<double> forced_p;
  bool use_id = true;  // fine-tuning only; false for the cold-start path
};

/// Mix-modality sequence representations for a batch. Item encodings come
/// from `table`, which must cover every non-pad batch item. Pre-training
/// mixes the two modality sequences; fine-tuning adds the ID embeddings to
/// both. One u64 is always taken from rng to seed the mixup draws, so the
/// dropout stream does not depend on whether mixup is active.
template <class Real>
SequenceActivations<Real> m2se_forward(nk::Graph<Real>& g, const Model<Real>& m,
                                       const ItemTable<Real>& table,
                                       const data::TrainingBatch& batch,
                                       const ForwardOptions& opt, Rng& rng);

}  // namespace mp4sr::m2se
