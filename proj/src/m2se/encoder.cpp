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

#include "m2se/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "common/errors.hpp"

namespace mp4sr::m2se {

using nk::Graph;
using nk::Mask;

std::vector<ItemIndex> sequence_dropout(std::span<const ItemIndex> prefix, double rho, Rng& rng) {
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("sequence dropout ratio must lie in [0, 1)");
  std::vector<ItemIndex> kept;
  kept.reserve(prefix.size());
  for (ItemIndex i : prefix)
    if (!rng.bernoulli(rho)) kept.push_back(i);
  if (kept.empty() && !prefix.empty()) kept.push_back(prefix.back());
  return kept;
}

template <class Real>
ItemFeatureBlock<Real> gather_features(const data::FeatureBank& bank,
                                       std::span<const ItemIndex> items, bool image) {
  const std::size_t n = items.size(), d = bank.dim();
  std::size_t r_max = 1;
  for (ItemIndex i : items) r_max = std::max(r_max, bank.rows(i, image));
  std::vector<Real> x(n * r_max * d, Real(0));
  Mask rows(n * r_max, 0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto f = bank.features(items[k], image);
    std::copy(f.begin(), f.end(), x.begin() + static_cast<std::ptrdiff_t>(k * r_max * d));
    std::fill_n(rows.begin() + static_cast<std::ptrdiff_t>(k * r_max), f.size() / d, 1);
  }
  return {T<Real>::from({n, r_max, d}, std::move(x)), std::move(rows)};
}

template <class Real>
void attention_pool(Graph<Real>& g, const ItemFeatureBlock<Real>& block,
                    const ModalityEncoderParams<Real>& p, EncoderActivations<Real>& out) {
  const std::size_t n = block.x.dim(0), r = block.x.dim(1), d = block.x.dim(2);
  auto flat = g.reshape(block.x, {n * r, d});
  auto hid = g.add_broadcast(g.matmul(flat, p.attn_w1), p.attn_b1);
  auto score = g.add_broadcast(g.matmul(hid, p.attn_w2), p.attn_b2);
  out.alpha = g.masked_softmax(g.reshape(score, {n, r}), block.rows);
  out.e = g.reshape(g.bmm(g.reshape(out.alpha, {n, 1, r}), block.x), {n, d});
}

template <class Real>
void moe_forward(Graph<Real>& g, const ModalityEncoderParams<Real>& p, double dropout, Rng& rng,
                 bool training, EncoderActivations<Real>& out) {
  const std::size_t n = out.e.dim(0), o = p.gate_w.dim(1), d0 = p.expert_ln_g.dim(1);
  auto y = g.add_broadcast(g.matmul(out.e, p.expert_w), p.expert_b);
  y = g.reshape(g.dropout(y, dropout, rng, training), {n, o, d0});
  out.experts = g.layer_norm(y, p.expert_ln_g, p.expert_ln_b);
  out.gate = g.softmax(g.add_broadcast(g.matmul(out.e, p.gate_w), p.gate_b));
  out.z = g.reshape(g.bmm(g.reshape(out.gate, {n, 1, o}), out.experts), {n, d0});
}

template <class Real>
EncoderActivations<Real> encode_items(Graph<Real>& g, const ModalityEncoderParams<Real>& p,
                                      const data::FeatureBank& bank,
                                      std::span<const ItemIndex> items, bool image,
                                      double dropout, Rng& rng, bool training) {
  if (items.empty()) throw ContractError("encode_items: no items");
  EncoderActivations<Real> out;
  attention_pool(g, gather_features<Real>(bank, items, image), p, out);
  moe_forward(g, p, dropout, rng, training, out);
  return out;
}

template <class Real>
ItemTable<Real> make_item_table(Graph<Real>& g, const Model<Real>& m,
                                const data::FeatureBank& bank, std::vector<ItemIndex> items,
                                Rng& rng, bool training) {
  ItemTable<Real> t;
  t.slot.assign(m.config.num_items + 1, -1);
  for (std::size_t k = 0; k < items.size(); ++k) {
    const ItemIndex i = items[k];
    if (i <= data::kPad || static_cast<std::size_t>(i) > m.config.num_items) {
      throw ContractError("make_item_table: item index " + std::to_string(i) + " out of range");
    }
    if (t.slot[static_cast<std::size_t>(i)] != -1) {
      throw ContractError("make_item_table: duplicate item " + std::to_string(i));
    }
    t.slot[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(k);
  }
  const double rate = m.config.dropout;
  t.text = encode_items(g, m.text, bank, items, false, rate, rng, training).z;
  t.image = encode_items(g, m.image, bank, items, true, rate, rng, training).z;
  t.items = std::move(items);
  return t;
}

template <class Real>
ItemTable<Real> make_catalog_table(Graph<Real>& g, const Model<Real>& m,
                                   const data::FeatureBank& bank, Rng& rng, bool training) {
  std::vector<ItemIndex> all(m.config.num_items);
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<ItemIndex>(k + 1);
  return make_item_table(g, m, bank, std::move(all), rng, training);
}

std::vector<ItemIndex> batch_items(const data::TrainingBatch& batch) {
  std::vector<ItemIndex> out;
  for (ItemIndex i : batch.items)
    if (i != data::kPad) out.push_back(i);
  for (ItemIndex i : batch.targets)
    if (i != data::kPad) out.push_back(i);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

template <class Real>
MixupResult<Real> complementary_mixup(Graph<Real>& g, const T<Real>& z_text,
                                      const T<Real>& z_image, const Mask& is_pad, bool active,
                                      Rng& rng, std::optional<double> forced_p, double p_max) {
  if (z_text.shape() != z_image.shape() || is_pad.size() != z_text.dim(0)) {
    throw DimensionError("complementary_mixup: " + nk::shape_str(z_text.shape()) + " vs " +
                         nk::shape_str(z_image.shape()));
  }
  MixupResult<Real> r;
  r.swap.assign(is_pad.size(), 0);
  if (!active) {
    r.m_text = z_text;
    r.m_image = z_image;
    return r;
  }
  r.p = forced_p ? *forced_p : rng.uniform(0.0, p_max);
  for (std::size_t j = 0; j < is_pad.size(); ++j)
    if (!is_pad[j]) r.swap[j] = rng.bernoulli(r.p) ? 1 : 0;
  r.m_text = g.where_rows(r.swap, z_text, z_image);
  r.m_image = g.where_rows(r.swap, z_image, z_text);
  return r;
}

template <class Real>
TransformerOutput<Real> transformer_encode(Graph<Real>& g, const TransformerParams<Real>& p,
                                           const T<Real>& x, const Mask& is_pad,
                                           std::size_t heads, double dropout, Rng& rng,
                                           bool training) {
  if (x.rank() != 3 || x.dim(1) > p.pos.dim(0) || is_pad.size() != x.dim(0) * x.dim(1)) {
    throw DimensionError("transformer_encode: input " + nk::shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0), w = x.dim(1), d0 = x.dim(2), dh = d0 / heads;
  const std::size_t max_len = p.pos.dim(0);

  std::vector<std::int64_t> pos_idx(w);
  for (std::size_t c = 0; c < w; ++c) pos_idx[c] = static_cast<std::int64_t>(max_len - w + c);
  // Key j is visible to query i when j <= i and j is not padding.
  Mask attend(b * heads * w * w, 0);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t hd = 0; hd < heads; ++hd)
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j <= i; ++j)
          attend[((r * heads + hd) * w + i) * w + j] = is_pad[r * w + j] ? 0 : 1;

  auto h = g.add_broadcast(x, g.gather_rows(p.pos, pos_idx));
  h = g.dropout(h, dropout, rng, training);
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  for (const auto& y : p.layers) {
    auto a = g.layer_norm(h, y.ln1_g, y.ln1_b);
    auto q = g.split_heads(g.add_broadcast(g.matmul(a, y.wq), y.bq), heads);
    auto k = g.split_heads(g.add_broadcast(g.matmul(a, y.wk), y.bk), heads);
    auto v = g.split_heads(g.add_broadcast(g.matmul(a, y.wv), y.bv), heads);
    auto att = g.masked_softmax(g.scale(g.bmm(q, k, true), inv_sqrt), attend);
    auto o = g.merge_heads(g.bmm(att, v), heads);
    o = g.add_broadcast(g.matmul(o, y.wo), y.bo);
    h = g.add(h, g.dropout(o, dropout, rng, training));
    auto f = g.layer_norm(h, y.ln2_g, y.ln2_b);
    f = g.gelu(g.add_broadcast(g.matmul(f, y.ff1_w), y.ff1_b));
    f = g.add_broadcast(g.matmul(f, y.ff2_w), y.ff2_b);
    h = g.add(h, g.dropout(f, dropout, rng, training));
  }
  TransformerOutput<Real> out;
  out.hidden = g.layer_norm(h, p.final_g, p.final_b);
  out.h = g.select_step(out.hidden, w - 1);
  return out;
}

template <class Real>
SequenceActivations<Real> m2se_forward(Graph<Real>& g, const Model<Real>& m,
                                       const ItemTable<Real>& table,
                                       const data::TrainingBatch& batch,
                                       const ForwardOptions& opt, Rng& rng) {
  const std::size_t b = batch.size, w = batch.max_len, d0 = m.config.hidden;
  if (w == 0 || w > m.config.max_len || batch.items.size() != b * w) {
    throw DimensionError("m2se_forward: batch width " + std::to_string(w));
  }
  const bool finetune = opt.stage == data::Stage::kFinetune;
  if (finetune && opt.use_id && !m.id_table.defined()) {
    throw ConfigError("fine-tuning with ID embeddings requires an ID table");
  }
  std::vector<std::int64_t> slot(b * w, -1), id(b * w, -1);
  for (std::size_t j = 0; j < b * w; ++j) {
    const ItemIndex i = batch.items[j];
    if (i == data::kPad) continue;
    slot[j] = table.slot.at(static_cast<std::size_t>(i));
    if (slot[j] < 0) throw ContractError("m2se_forward: item " + std::to_string(i) + " not encoded");
    id[j] = i;
  }
  Rng mix_rng(rng.next_u64());

  SequenceActivations<Real> a;
  a.z_text = g.gather_rows(table.text, slot);
  a.z_image = g.gather_rows(table.image, slot);
  if (finetune) {
    a.swap.assign(b * w, 0);
    if (opt.use_id) {
      auto e_s = g.gather_rows(m.id_table, id);
      a.m_text = g.add(a.z_text, e_s);
      a.m_image = g.add(a.z_image, e_s);
    } else {
      a.m_text = a.z_text;
      a.m_image = a.z_image;
    }
  } else {
    auto mix = complementary_mixup(g, a.z_text, a.z_image, batch.is_pad, opt.mixup, mix_rng,
                                   opt.forced_p);
    a.m_text = mix.m_text;
    a.m_image = mix.m_image;
    a.swap = std::move(mix.swap);
    a.p = mix.p;
  }
  const auto rate = m.config.dropout;
  a.text = transformer_encode(g, m.transformer, g.reshape(a.m_text, {b, w, d0}), batch.is_pad,
                              m.config.heads, rate, rng, opt.training);
  a.image = transformer_encode(g, m.transformer, g.reshape(a.m_image, {b, w, d0}), batch.is_pad,
                               m.config.heads, rate, rng, opt.training);
  return a;
}

#define MP4SR_M2SE_INSTANTIATE(R)                                                              \
  template ItemFeatureBlock<R> gather_features<R>(const data::FeatureBank&,                     \
                                                  std::span<const ItemIndex>, bool);            \
  template void attention_pool<R>(Graph<R>&, const ItemFeatureBlock<R>&,                        \
                                  const ModalityEncoderParams<R>&, EncoderActivations<R>&);     \
  template void moe_forward<R>(Graph<R>&, const ModalityEncoderParams<R>&, double, Rng&, bool,  \
                               EncoderActivations<R>&);                                         \
  template EncoderActivations<R> encode_items<R>(Graph<R>&, const ModalityEncoderParams<R>&,    \
                                                 const data::FeatureBank&,                      \
                                                 std::span<const ItemIndex>, bool, double,      \
                                                 Rng&, bool);                                   \
  template ItemTable<R> make_item_table<R>(Graph<R>&, const Model<R>&,                          \
                                           const data::FeatureBank&, std::vector<ItemIndex>,    \
                                           Rng&, bool);                                         \
  template ItemTable<R> make_catalog_table<R>(Graph<R>&, const Model<R>&,                       \
                                              const data::FeatureBank&, Rng&, bool);            \
  template MixupResult<R> complementary_mixup<R>(Graph<R>&, const T<R>&, const T<R>&,           \
                                                 const Mask&, bool, Rng&,                       \
                                                 std::optional<double>, double);                \
  template TransformerOutput<R> transformer_encode<R>(Graph<R>&, const TransformerParams<R>&,   \
                                                      const T<R>&, const Mask&, std::size_t,    \
                                                      double, Rng&, bool);                      \
  template SequenceActivations<R> m2se_forward<R>(Graph<R>&, const Model<R>&,                   \
                                                  const ItemTable<R>&,                          \
                                                  const data::TrainingBatch&,                   \
                                                  const ForwardOptions&, Rng&);

MP4SR_M2SE_INSTANTIATE(float)
MP4SR_M2SE_INSTANTIATE(double)

}  // namespace mp4sr::m2se
