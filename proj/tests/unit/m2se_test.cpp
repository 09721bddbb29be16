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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "common/binio.hpp"
#include "common/errors.hpp"
#include "m2se/checkpoint.hpp"
#include "m2se/encoder.hpp"
#include "numkernel/gradcheck.hpp"
#include "objectives/losses.hpp"
#include "test_util.hpp"

namespace mp4sr::m2se {
namespace {

using data::ItemIndex;
using data::TrainingInstance;
using nk::Graph;
using testutil::batch_of;
using testutil::random_tensor;
using testutil::TD;

using Vec = std::vector<double>;

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Fills every parameter with U(-scale, scale).
void randomize(Model<double>& m, Rng& rng, double scale = 0.5) {
  for (auto& p : m.parameters())
    for (auto& v : p.tensor.data()) v = rng.uniform(-scale, scale);
}

struct Fixture {
  data::SynthData syn = testutil::tiny_synth();
  data::FeatureBank bank{syn.dataset, syn.features};
  ModelConfig cfg = testutil::tiny_config(syn.dataset.num_items());

  Model<double> model(std::uint64_t seed = 5, bool random = true) const {
    Rng rng(seed);
    auto m = init_model<double>(cfg, rng);
    if (random) randomize(m, rng);
    std::fill_n(m.id_table.data().begin(), cfg.hidden, 0.0);
    return m;
  }
  std::vector<TrainingInstance> instances() const {
    return {{{1, 2, 3, 4}, 5}, {{6, 7}, 8}, {{9}, 2}};
  }
};

// ---- direct-formula oracles -------------------------------------------------

Vec oracle_layer_norm(const Vec& x, const double* g, const double* b) {
  const double n = static_cast<double>(x.size());
  double mu = 0, var = 0;
  for (double v : x) mu += v;
  mu /= n;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= n;
  Vec out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    out[j] = (x[j] - mu) / std::sqrt(var + 1e-12) * g[j] + b[j];
  return out;
}

Vec oracle_softmax(const Vec& s) {
  double mx = *std::max_element(s.begin(), s.end()), z = 0;
  Vec out(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) z += out[j] = std::exp(s[j] - mx);
  for (auto& v : out) v /= z;
  return out;
}

// Attention pooling of one item's rows (r x d).
Vec oracle_pool(const ModalityEncoderParams<double>& p, std::span<const float> rows, std::size_t d,
                Vec* alpha_out = nullptr) {
  const std::size_t r = rows.size() / d, da = p.attn_b1.numel();
  Vec s(r);
  for (std::size_t j = 0; j < r; ++j) {
    double acc = p.attn_b2.data()[0];
    for (std::size_t a = 0; a < da; ++a) {
      double h = p.attn_b1.data()[a];
      for (std::size_t k = 0; k < d; ++k) h += rows[j * d + k] * p.attn_w1.data()[k * da + a];
      acc += h * p.attn_w2.data()[a];
    }
    s[j] = acc;
  }
  const Vec alpha = oracle_softmax(s);
  Vec e(d, 0.0);
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t k = 0; k < d; ++k) e[k] += alpha[j] * rows[j * d + k];
  if (alpha_out) *alpha_out = alpha;
  return e;
}

// Eval-mode mixture of experts on pooled vector e.
Vec oracle_moe(const ModalityEncoderParams<double>& p, const Vec& e, Vec* gate_out = nullptr) {
  const std::size_t d = e.size(), o = p.gate_b.numel(), d0 = p.expert_ln_g.dim(1);
  Vec logits(o);
  for (std::size_t k = 0; k < o; ++k) {
    logits[k] = p.gate_b.data()[k];
    for (std::size_t i = 0; i < d; ++i) logits[k] += e[i] * p.gate_w.data()[i * o + k];
  }
  const Vec gate = oracle_softmax(logits);
  Vec z(d0, 0.0);
  for (std::size_t k = 0; k < o; ++k) {
    Vec y(d0);
    for (std::size_t c = 0; c < d0; ++c) {
      y[c] = p.expert_b.data()[k * d0 + c];
      for (std::size_t i = 0; i < d; ++i) y[c] += e[i] * p.expert_w.data()[i * o * d0 + k * d0 + c];
    }
    const Vec ek = oracle_layer_norm(y, p.expert_ln_g.data().data() + k * d0,
                                     p.expert_ln_b.data().data() + k * d0);
    for (std::size_t c = 0; c < d0; ++c) z[c] += gate[k] * ek[c];
  }
  if (gate_out) *gate_out = gate;
  return z;
}

// ---- sequence dropout ---------------------------------------------------------

TEST(SequenceDropout, ZeroRateIsIdentity) {
  Rng rng(1);
  std::vector<ItemIndex> s = {4, 2, 9, 1};
  EXPECT_EQ(sequence_dropout(s, 0.0, rng), s);
}

TEST(SequenceDropout, SingleItemIsRetained) {
  Rng rng(2);
  std::vector<ItemIndex> s = {7};
  for (int t = 0; t < 100; ++t) EXPECT_EQ(sequence_dropout(s, 0.9, rng), s);
}

TEST(SequenceDropout, EmpiricalRateAndOrder) {
  Rng rng(3);
  std::vector<ItemIndex> s = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t dropped = 0;
  const std::size_t trials = 100000;
  for (std::size_t t = 0; t < trials; ++t) {
    auto out = sequence_dropout(s, 0.2, rng);
    ASSERT_TRUE(std::is_sorted(out.begin(), out.end()));
    dropped += s.size() - out.size();
  }
  EXPECT_NEAR(static_cast<double>(dropped) / (10.0 * trials), 0.2, 0.01);
  EXPECT_THROW(sequence_dropout(s, 1.0, rng), ConfigError);
}

// ---- attention pooling and experts ------------------------------------------

TEST(AttentionPool, SingleRowGetsFullWeight) {
  Fixture f;
  auto m = f.model();
  Rng rng(4);
  auto x = random_tensor({1, 1, 8}, rng);
  Graph<double> g(false);
  EncoderActivations<double> a;
  attention_pool(g, {x, {1}}, m.text, a);
  EXPECT_EQ(a.alpha.data()[0], 1.0);
  EXPECT_TRUE(bitwise_equal(a.e.data(), x.data()));
}

TEST(AttentionPool, IdenticalRowsSplitEvenly) {
  Fixture f;
  auto m = f.model();
  Rng rng(4);
  auto row = random_tensor({8}, rng);
  Vec v(row.data().begin(), row.data().end());
  v.insert(v.end(), row.data().begin(), row.data().end());
  Graph<double> g(false);
  EncoderActivations<double> a;
  attention_pool(g, {TD::from({1, 2, 8}, v), {1, 1}}, m.text, a);
  EXPECT_DOUBLE_EQ(a.alpha.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(a.alpha.data()[1], 0.5);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(a.e.data()[k], row.data()[k]);
}

TEST(AttentionPool, MatchesDirectEvaluation) {
  Fixture f;
  auto m = f.model();
  const std::vector<ItemIndex> items = {1, 2, 3};
  Graph<double> g(false);
  EncoderActivations<double> a;
  auto block = gather_features<double>(f.bank, items, false);
  attention_pool(g, block, m.text, a);
  const std::size_t r = block.x.dim(1);
  for (std::size_t k = 0; k < items.size(); ++k) {
    Vec alpha;
    const Vec e = oracle_pool(m.text, f.bank.features(items[k], false), 8, &alpha);
    double total = 0;
    for (std::size_t j = 0; j < r; ++j) {
      const double got = a.alpha.data()[k * r + j];
      total += got;
      EXPECT_NEAR(got, j < alpha.size() ? alpha[j] : 0.0, 1e-12);
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(a.e.data()[k * 8 + c], e[c], 1e-12);
  }
}

TEST(Moe, SingleExpertIsLayerNormOfLinear) {
  Fixture f;
  f.cfg.experts = 1;
  auto m = f.model();
  Rng rng(6);
  EncoderActivations<double> a;
  a.e = random_tensor({1, 8}, rng);
  Graph<double> g(false);
  moe_forward(g, m.text, 0.2, rng, false, a);
  EXPECT_EQ(a.gate.data()[0], 1.0);
  Vec y(8);
  for (std::size_t c = 0; c < 8; ++c) {
    y[c] = m.text.expert_b.data()[c];
    for (std::size_t i = 0; i < 8; ++i) y[c] += a.e.data()[i] * m.text.expert_w.data()[i * 8 + c];
  }
  const Vec z = oracle_layer_norm(y, m.text.expert_ln_g.data().data(), m.text.expert_ln_b.data().data());
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(a.z.data()[c], z[c], 1e-12);
}

TEST(Moe, IdenticalExpertsIgnoreTheGate) {
  Fixture f;
  auto m = f.model();
  auto& p = m.text;
  const std::size_t d0 = 8, o = 2;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < d0; ++c) p.expert_w.data()[i * o * d0 + d0 + c] = p.expert_w.data()[i * o * d0 + c];
  for (std::size_t c = 0; c < d0; ++c) {
    p.expert_b.data()[d0 + c] = p.expert_b.data()[c];
    p.expert_ln_g.data()[d0 + c] = p.expert_ln_g.data()[c];
    p.expert_ln_b.data()[d0 + c] = p.expert_ln_b.data()[c];
  }
  Rng rng(7);
  EncoderActivations<double> a;
  a.e = random_tensor({3, 8}, rng);
  Graph<double> g(false);
  moe_forward(g, p, 0.2, rng, false, a);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < d0; ++c)
      EXPECT_NEAR(a.z.data()[r * d0 + c], a.experts.data()[r * o * d0 + c], 1e-12);
}

TEST(Moe, EightExpertsMatchDirectEvaluation) {
  Fixture f;
  f.cfg.experts = 8;
  auto m = f.model();
  Rng rng(8);
  EncoderActivations<double> a;
  a.e = random_tensor({4, 8}, rng);
  Graph<double> g(false);
  moe_forward(g, m.image, 0.2, rng, false, a);
  for (std::size_t r = 0; r < 4; ++r) {
    Vec gate;
    const Vec z = oracle_moe(m.image, Vec(a.e.data().begin() + r * 8, a.e.data().begin() + (r + 1) * 8), &gate);
    double total = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      total += a.gate.data()[r * 8 + k];
      EXPECT_NEAR(a.gate.data()[r * 8 + k], gate[k], 1e-12);
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(a.z.data()[r * 8 + c], z[c], 1e-12);
  }
}

TEST(EncodeItems, RowsAreIndependentPerItem) {
  Fixture f;
  auto m = f.model();
  const std::vector<ItemIndex> items = {3, 5, 7};
  Rng rng(9);
  Graph<double> g(false);
  auto before = encode_items(g, m.text, f.bank, items, false, 0.2, rng, false).z;
  const auto feats = f.bank.features(5, false);
  std::vector<float> changed(feats.begin(), feats.end());
  for (auto& v : changed) v += 1.5f;
  f.bank.set_features(5, false, changed);
  auto after = encode_items(g, m.text, f.bank, items, false, 0.2, rng, false).z;
  for (std::size_t r : {0u, 2u})
    EXPECT_TRUE(bitwise_equal(before.data().subspan(r * 8, 8), after.data().subspan(r * 8, 8)));
  EXPECT_FALSE(bitwise_equal(before.data().subspan(8, 8), after.data().subspan(8, 8)));
}

TEST(EncodeItems, SingleItemIsComposition) {
  Fixture f;
  auto m = f.model();
  const std::vector<ItemIndex> items = {4};
  Rng rng(10);
  Graph<double> g(false);
  auto z = encode_items(g, m.image, f.bank, items, true, 0.2, rng, false).z;
  const Vec expected = oracle_moe(m.image, oracle_pool(m.image, f.bank.features(4, true), 8));
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(z.data()[c], expected[c], 1e-12);
}

// ---- mixup --------------------------------------------------------------------

TEST(Mixup, InactiveAndZeroRateAreIdentity) {
  Rng rng(11);
  auto zt = random_tensor({6, 4}, rng), zv = random_tensor({6, 4}, rng);
  nk::Mask pad = {1, 0, 0, 1, 0, 0};
  Graph<double> g(false);
  auto off = complementary_mixup(g, zt, zv, pad, false, rng);
  EXPECT_EQ(off.p, 0.0);
  EXPECT_TRUE(bitwise_equal(off.m_text.data(), zt.data()));
  EXPECT_TRUE(bitwise_equal(off.m_image.data(), zv.data()));
  auto zero = complementary_mixup(g, zt, zv, pad, true, rng, 0.0);
  EXPECT_TRUE(bitwise_equal(zero.m_text.data(), zt.data()));
  EXPECT_TRUE(bitwise_equal(zero.m_image.data(), zv.data()));
  for (auto s : zero.swap) EXPECT_EQ(s, 0);
}

TEST(Mixup, FullMaskSwapsEveryRealRow) {
  Rng rng(12);
  auto zt = random_tensor({4, 3}, rng), zv = random_tensor({4, 3}, rng);
  Graph<double> g(false);
  auto r = complementary_mixup(g, zt, zv, nk::Mask(4, 0), true, rng, 1.0);
  EXPECT_TRUE(bitwise_equal(r.m_text.data(), zv.data()));
  EXPECT_TRUE(bitwise_equal(r.m_image.data(), zt.data()));
}

TEST(Mixup, ComplementarityOnSeededDraws) {
  Rng rng(13);
  auto zt = random_tensor({10, 3}, rng), zv = random_tensor({10, 3}, rng);
  nk::Mask pad = {1, 1, 0, 0, 0, 0, 0, 0, 0, 0};
  Graph<double> g(false);
  for (int draw = 0; draw < 1000; ++draw) {
    auto r = complementary_mixup(g, zt, zv, pad, true, rng);
    ASSERT_GE(r.p, 0.0);
    ASSERT_LE(r.p, 0.5);
    for (std::size_t j = 0; j < 10; ++j) {
      auto t = r.m_text.data().subspan(j * 3, 3), v = r.m_image.data().subspan(j * 3, 3);
      auto zt_j = zt.data().subspan(j * 3, 3), zv_j = zv.data().subspan(j * 3, 3);
      if (pad[j]) ASSERT_EQ(r.swap[j], 0);
      if (r.swap[j]) {
        ASSERT_TRUE(bitwise_equal(t, zv_j) && bitwise_equal(v, zt_j));
      } else {
        ASSERT_TRUE(bitwise_equal(t, zt_j) && bitwise_equal(v, zv_j));
      }
    }
  }
}

// ---- transformer --------------------------------------------------------------

nk::Mask right_aligned_pad(std::size_t b, std::size_t w, const std::vector<std::size_t>& lens) {
  nk::Mask pad(b * w, 1);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t c = w - lens[r]; c < w; ++c) pad[r * w + c] = 0;
  return pad;
}

TEST(Transformer, ZeroWeightsLeaveResidualPath) {
  Fixture f;
  auto m = f.model();
  for (auto& y : m.transformer.layers) {
    for (TD* t : {&y.wq, &y.bq, &y.wk, &y.bk, &y.wv, &y.bv, &y.wo, &y.bo, &y.ff1_w, &y.ff1_b,
                  &y.ff2_w, &y.ff2_b})
      std::fill(t->data().begin(), t->data().end(), 0.0);
    std::fill(y.ln1_g.data().begin(), y.ln1_g.data().end(), 1.0);
    std::fill(y.ln2_g.data().begin(), y.ln2_g.data().end(), 1.0);
    std::fill(y.ln1_b.data().begin(), y.ln1_b.data().end(), 0.0);
    std::fill(y.ln2_b.data().begin(), y.ln2_b.data().end(), 0.0);
  }
  Rng rng(14);
  auto x = random_tensor({2, 5, 8}, rng);
  Graph<double> g(false);
  auto out = transformer_encode(g, m.transformer, x, right_aligned_pad(2, 5, {5, 2}), 2, 0.2, rng, false);
  for (std::size_t r = 0; r < 2; ++r) {
    Vec in(8);
    for (std::size_t c = 0; c < 8; ++c)
      in[c] = x.data()[(r * 5 + 4) * 8 + c] + m.transformer.pos.data()[49 * 8 + c];
    const Vec h = oracle_layer_norm(in, m.transformer.final_g.data().data(),
                                    m.transformer.final_b.data().data());
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(out.h.data()[r * 8 + c], h[c], 1e-12);
  }
}

TEST(Transformer, PaddedInputsNeverReachRealPositions) {
  Fixture f;
  auto m = f.model();
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t w = 2 + rng.below(8);
    std::vector<std::size_t> lens = {1 + rng.below(w), 1 + rng.below(w), w};
    auto pad = right_aligned_pad(3, w, lens);
    auto x = random_tensor({3, w, 8}, rng);
    auto y = x.clone(false);
    for (std::size_t j = 0; j < 3 * w; ++j)
      if (pad[j])
        for (std::size_t c = 0; c < 8; ++c) y.data()[j * 8 + c] = rng.uniform(-50.0, 50.0);
    Graph<double> g(false);
    auto a = transformer_encode(g, m.transformer, x, pad, 2, 0.2, rng, false);
    auto b = transformer_encode(g, m.transformer, y, pad, 2, 0.2, rng, false);
    ASSERT_TRUE(bitwise_equal(a.h.data(), b.h.data()));
    for (std::size_t j = 0; j < 3 * w; ++j)
      if (!pad[j]) ASSERT_TRUE(bitwise_equal(a.hidden.data().subspan(j * 8, 8), b.hidden.data().subspan(j * 8, 8)));
  }
}

TEST(Transformer, AttentionIsCausal) {
  Fixture f;
  auto m = f.model();
  Rng rng(16);
  auto x = random_tensor({1, 6, 8}, rng);
  auto y = x.clone(false);
  for (std::size_t c = 0; c < 8; ++c) y.data()[5 * 8 + c] += 1.0;
  Graph<double> g(false);
  nk::Mask pad(6, 0);
  auto a = transformer_encode(g, m.transformer, x, pad, 2, 0.2, rng, false);
  auto b = transformer_encode(g, m.transformer, y, pad, 2, 0.2, rng, false);
  EXPECT_TRUE(bitwise_equal(a.hidden.data().subspan(0, 40), b.hidden.data().subspan(0, 40)));
  EXPECT_FALSE(bitwise_equal(a.h.data(), b.h.data()));
}

TEST(Transformer, LoneItemDependsOnlyOnItselfAndItsPosition) {
  Fixture f;
  auto m = f.model();
  Rng rng(17);
  auto x = random_tensor({1, 1, 8}, rng);
  Vec wide(7 * 8);
  for (auto& v : wide) v = rng.uniform(-3.0, 3.0);
  std::copy(x.data().begin(), x.data().end(), wide.end() - 8);
  Graph<double> g(false);
  auto narrow = transformer_encode(g, m.transformer, x, nk::Mask{0}, 2, 0.2, rng, false);
  auto padded = transformer_encode(g, m.transformer, TD::from({1, 7, 8}, wide),
                                   nk::Mask{1, 1, 1, 1, 1, 1, 0}, 2, 0.2, rng, false);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(narrow.h.data()[c], padded.h.data()[c], 1e-12);
}

// ---- full forward -------------------------------------------------------------

TEST(M2seForward, PadRowsEncodeToZero) {
  Fixture f;
  auto m = f.model();
  auto inst = f.instances();
  auto batch = batch_of(inst);
  Rng rng(18);
  Graph<double> g(false);
  auto table = make_item_table(g, m, f.bank, batch_items(batch), rng, false);
  auto acts = m2se_forward(g, m, table, batch, {.training = false}, rng);
  for (std::size_t j = 0; j < batch.items.size(); ++j)
    if (batch.is_pad[j])
      for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(acts.z_text.data()[j * 8 + c], 0.0);
}

TEST(M2seForward, ZeroIdTableMatchesUnmixedPretrain) {
  Fixture f;
  auto m = f.model();
  std::fill(m.id_table.data().begin(), m.id_table.data().end(), 0.0);
  auto inst = f.instances();
  auto batch = batch_of(inst);
  auto run = [&](const ForwardOptions& opt) {
    Rng rng(19);
    Graph<double> g(false);
    auto table = make_item_table(g, m, f.bank, batch_items(batch), rng, true);
    return m2se_forward(g, m, table, batch, opt, rng);
  };
  auto pre = run({.stage = data::Stage::kPretrain, .training = true, .mixup = false});
  auto fine = run({.stage = data::Stage::kFinetune, .training = true});
  EXPECT_TRUE(bitwise_equal(pre.text.h.data(), fine.text.h.data()));
  EXPECT_TRUE(bitwise_equal(pre.image.h.data(), fine.image.h.data()));
}

TEST(M2seForward, TextPathIgnoresImageFeaturesWithoutMixup) {
  Fixture f;
  auto m = f.model();
  auto inst = f.instances();
  auto batch = batch_of(inst);
  auto run = [&]() {
    Rng rng(20);
    Graph<double> g(false);
    auto table = make_item_table(g, m, f.bank, batch_items(batch), rng, false);
    return m2se_forward(g, m, table, batch, {.training = false, .forced_p = 0.0}, rng);
  };
  auto a = run();
  Rng noise(21);
  for (ItemIndex i = 1; i <= static_cast<ItemIndex>(f.bank.num_items()); ++i) {
    std::vector<float> v(f.bank.features(i, true).size());
    for (auto& x : v) x = static_cast<float>(noise.normal());
    f.bank.set_features(i, true, v);
  }
  auto b = run();
  EXPECT_TRUE(bitwise_equal(a.text.h.data(), b.text.h.data()));
  EXPECT_FALSE(bitwise_equal(a.image.h.data(), b.image.h.data()));
}

TEST(M2seForward, SameSeedSameActivations) {
  Fixture f;
  auto m = f.model();
  auto inst = f.instances();
  auto batch = batch_of(inst);
  auto run = [&]() {
    Rng rng(22);
    Graph<double> g(false);
    auto table = make_item_table(g, m, f.bank, batch_items(batch), rng, true);
    return m2se_forward(g, m, table, batch, {}, rng);
  };
  auto a = run(), b = run();
  EXPECT_EQ(a.swap, b.swap);
  EXPECT_EQ(a.p, b.p);
  EXPECT_TRUE(bitwise_equal(a.text.h.data(), b.text.h.data()));
  EXPECT_TRUE(bitwise_equal(a.image.h.data(), b.image.h.data()));
}

TEST(M2seForward, FinetuneWithoutIdTableIsConfigError) {
  Fixture f;
  auto m = f.model();
  m.id_table = TD();
  auto inst = f.instances();
  auto batch = batch_of(inst);
  Rng rng(23);
  Graph<double> g(false);
  auto table = make_item_table(g, m, f.bank, batch_items(batch), rng, false);
  EXPECT_THROW(m2se_forward(g, m, table, batch, {.stage = data::Stage::kFinetune}, rng), ConfigError);
}

// ---- gradients ----------------------------------------------------------------

std::vector<TD> trainable(const Model<double>& m, bool with_id) {
  std::vector<TD> out;
  for (const auto& p : m.parameters())
    if (with_id || p.name != "id_table") out.push_back(p.tensor);
  return out;
}

TEST(Gradients, PretrainObjectiveEndToEnd) {
  Fixture f;
  auto m = f.model(24, false);
  Rng init(25);
  randomize(m, init, 0.3);
  std::vector<TrainingInstance> inst = {{{1, 2, 3}, 4}, {{5, 6}, 7}};
  auto batch = batch_of(inst);
  auto loss = [&](Graph<double>& g) {
    Rng rng(26);
    auto table = make_item_table(g, m, f.bank, batch_items(batch), rng, true);
    auto acts = m2se_forward(g, m, table, batch, {.forced_p = 0.5}, rng);
    return obj::pretrain_loss(g, m, acts, table, batch.targets, 0.5, 0.3, {}).total;
  };
  auto report = nk::gradient_check(loss, trainable(m, false));
  EXPECT_LT(report.max_rel_error, 1e-3) << "param " << report.worst_param;
}

TEST(Gradients, FinetuneObjectiveEndToEnd) {
  Fixture f;
  auto m = f.model(27);
  std::vector<TrainingInstance> inst = {{{1, 2, 3}, 4}, {{5, 6}, 7}};
  auto batch = batch_of(inst);
  auto loss = [&](Graph<double>& g) {
    Rng rng(28);
    auto catalog = make_catalog_table(g, m, f.bank, rng, true);
    auto acts = m2se_forward(g, m, catalog, batch, {.stage = data::Stage::kFinetune}, rng);
    auto logits = obj::finetune_logits(g, acts.text.h, acts.image.h, catalog, m.id_table);
    return obj::finetune_loss(g, logits, batch.targets);
  };
  auto report = nk::gradient_check(loss, trainable(m, true));
  EXPECT_LT(report.max_rel_error, 1e-3) << "param " << report.worst_param;
}

TEST(SharedEncoders, AliasedParametersReceiveSummedGradients) {
  Fixture f;
  auto separate = f.model(29);
  // Same values in both encoders, distinct storage.
  auto tp = std::vector<TD>{separate.text.attn_w1,    separate.text.attn_b1,
                            separate.text.attn_w2,    separate.text.attn_b2,
                            separate.text.expert_w,   separate.text.expert_b,
                            separate.text.expert_ln_g, separate.text.expert_ln_b,
                            separate.text.gate_w,     separate.text.gate_b};
  auto ip = std::vector<TD>{separate.image.attn_w1,    separate.image.attn_b1,
                            separate.image.attn_w2,    separate.image.attn_b2,
                            separate.image.expert_w,   separate.image.expert_b,
                            separate.image.expert_ln_g, separate.image.expert_ln_b,
                            separate.image.gate_w,     separate.image.gate_b};
  for (std::size_t k = 0; k < tp.size(); ++k)
    std::copy(tp[k].data().begin(), tp[k].data().end(), ip[k].data().begin());
  auto shared = cast_model<double, double>(separate);
  shared.config.shared_encoders = true;
  shared.image = shared.text;
  EXPECT_TRUE(shared.image.expert_w.same_storage(shared.text.expert_w));
  for (const auto& p : shared.parameters()) EXPECT_EQ(p.name.find("encoder.image"), std::string::npos);

  auto inst = f.instances();
  auto batch = batch_of(inst);
  auto backprop = [&](Model<double>& m) {
    m.zero_grad();
    Rng rng(30);
    Graph<double> g;
    auto table = make_item_table(g, m, f.bank, batch_items(batch), rng, false);
    auto acts = m2se_forward(g, m, table, batch, {.training = false}, rng);
    g.backward(obj::pretrain_loss(g, m, acts, table, batch.targets, 0.07, 0.01, {}).total);
  };
  backprop(separate);
  backprop(shared);
  for (std::size_t k = 0; k < shared.text.expert_w.numel(); ++k) {
    EXPECT_NEAR(shared.text.expert_w.grad()[k],
                separate.text.expert_w.grad()[k] + separate.image.expert_w.grad()[k], 1e-10);
  }
}

// ---- initialisation and checkpoints ---------------------------------------------

TEST(Init, TruncatedNormalWeightsAndZeroBiases) {
  Fixture f;
  f.cfg.hidden = 64;
  f.cfg.attn_dim = 64;
  Rng rng(31);
  auto m = init_model<float>(f.cfg, rng);
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& p : m.parameters()) {
    if (p.decay) {
      for (float v : p.tensor.data()) {
        ASSERT_LE(std::abs(v), 0.04f);
        sum += v;
        sq += double(v) * v;
        ++n;
      }
    } else if (p.name.ends_with("_b") || p.name.find(".b") != std::string::npos) {
      for (float v : p.tensor.data()) ASSERT_EQ(v, 0.0f) << p.name;
    }
  }
  // Std of N(0, s) truncated at 2s is 0.8796 s.
  EXPECT_NEAR(sum / n, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(sq / n), 0.02 * 0.8796, 5e-4);
  for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(m.id_table.data()[c], 0.0f);
}

class CheckpointIo : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() /
                              ("mp4sr_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(CheckpointIo, RoundTripRestoresForwardBitExactly) {
  Fixture f;
  Rng rng(32);
  auto m = init_model<float>(f.cfg, rng);
  Checkpoint ck;
  ck.config_json = R"({"seed": 1})";
  ck.epoch = 7;
  ck.best_metric = 0.25;
  ck.rng_states = {rng.state()};
  ck.params = export_tensors(m);
  ck.adam_step = 3;
  ck.adam_m = ck.params;
  ck.adam_v = ck.params;
  save_checkpoint(ck, dir / "a.ckpt");
  auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.config_json, ck.config_json);
  EXPECT_EQ(back.epoch, 7u);
  EXPECT_EQ(back.best_metric, 0.25);
  EXPECT_EQ(back.rng_states, ck.rng_states);
  EXPECT_EQ(back.adam_step, 3u);
  ASSERT_EQ(back.adam_v.size(), ck.params.size());

  Rng other(99);
  auto restored = init_model<float>(f.cfg, other);
  import_tensors(restored, back.params);
  auto inst = f.instances();
  auto batch = batch_of(inst);
  auto h = [&](const Model<float>& model) {
    Rng r(33);
    Graph<float> g(false);
    auto table = make_item_table(g, model, f.bank, batch_items(batch), r, true);
    auto acts = m2se_forward(g, model, table, batch, {}, r);
    return std::vector<float>(acts.text.h.data().begin(), acts.text.h.data().end());
  };
  EXPECT_EQ(h(m), h(restored));
}

TEST_F(CheckpointIo, RejectsCorruptFiles) {
  Fixture f;
  Rng rng(34);
  auto m = init_model<float>(f.cfg, rng);
  Checkpoint ck;
  ck.params = export_tensors(m);
  save_checkpoint(ck, dir / "a.ckpt");
  std::string bytes = read_file(dir / "a.ckpt");
  write_file(dir / "t.ckpt", bytes.substr(0, bytes.size() - 100));
  EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), FormatError);
  std::string bad = bytes;
  bad[1] = '?';
  write_file(dir / "m.ckpt", bad);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), FormatError);
  write_file(dir / "x.ckpt", bytes + "x");
  EXPECT_THROW(load_checkpoint(dir / "x.ckpt"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_F(CheckpointIo, ImportRejectsShapeAndNameMismatch) {
  Fixture f;
  Rng rng(35);
  auto m = init_model<float>(f.cfg, rng);
  auto stored = export_tensors(m);
  stored[0].shape = {1, 1};
  EXPECT_THROW(import_tensors(m, stored), ContractError);
  stored = export_tensors(m);
  stored.pop_back();
  EXPECT_THROW(import_tensors(m, stored), ContractError);
  stored = export_tensors(m);
  stored.push_back({"extra", {1}, {0.0f}});
  EXPECT_THROW(import_tensors(m, stored), ContractError);
}

}  // namespace
}  // namespace mp4sr::m2se
