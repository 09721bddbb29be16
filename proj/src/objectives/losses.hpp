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

#include <span>
#include <vector>

#include "m2se/encoder.hpp"
#include "m2se/model.hpp"
#include "numkernel/graph.hpp"

namespace mp4sr::obj {

using m2se::T;

/// Cosine similarity with each norm guarded by +1e-12.
double similarity(std::span<const double> a, std::span<const double> b);

/// Pairwise cosine similarities of the rows of a [n, d] and b [m, d].
template <class Real>
T<Real> cosine_matrix(nk::Graph<Real>& g, const T<Real>& a, const T<Real>& b);

/// Next-item prediction loss in one modality space: row j's positives are
/// (m_hat[j], z[j]) and (m_tilde[j], z[j]) inside a single log; negatives
/// are the other targets of the batch. Summed over rows.
template <class Real>
T<Real> nip_loss(nk::Graph<Real>& g, const T<Real>& m_hat, const T<Real>& m_tilde,
                 const T<Real>& z, double tau);

/// Symmetric cross-modality contrastive loss between paired rows of m_hat
/// and m_tilde; in-batch negatives come from both matrices.
template <class Real>
T<Real> cmcl_loss(nk::Graph<Real>& g, const T<Real>& m_hat, const T<Real>& m_tilde, double tau);

struct PretrainFlags {
  bool no_nip = false;
  bool no_cmcl = false;
  bool no_proj = false;
};

template <class Real>
struct PretrainLossParts {
  T<Real> nip_text, nip_image, cmcl_text, cmcl_image, total;
};

/// Projected representations of one batch.
template <class Real>
struct Projected {
  T<Real> hat_text, tilde_text, hat_image, tilde_image;
};

template <class Real>
Projected<Real> project(nk::Graph<Real>& g, const m2se::ProjectionParams<Real>& p,
                        const T<Real>& h_text, const T<Real>& h_image, bool identity);

/// total = NIP_t + NIP_v + lambda * (CMCL_t + CMCL_v). Target embeddings are
/// rows of `table` at the batch targets. Disabled parts are exact zeros.
template <class Real>
PretrainLossParts<Real> pretrain_loss(nk::Graph<Real>& g, const m2se::Model<Real>& m,
                                      const m2se::SequenceActivations<Real>& acts,
                                      const m2se::ItemTable<Real>& table,
                                      std::span<const data::ItemIndex> targets, double tau,
                                      double lambda, const PretrainFlags& flags);

/// Logits over the catalog, [B, N + 1]: h_t (F_t + E)^T + h_v (F_v + E)^T.
/// `catalog` must hold item i in row i - 1. Column 0 is the pad and must be
/// masked by consumers. An undefined id_table scores without ID embeddings.
template <class Real>
T<Real> finetune_logits(nk::Graph<Real>& g, const T<Real>& h_text, const T<Real>& h_image,
                        const m2se::ItemTable<Real>& catalog, const T<Real>& id_table);

/// Mask keeping columns 1..N of a [rows, N + 1] logit matrix.
nk::Mask catalog_mask(std::size_t rows, std::size_t num_items);

/// Softmax over real items; the pad column gets probability 0.
template <class Real>
T<Real> finetune_probabilities(nk::Graph<Real>& g, const T<Real>& logits);

/// Summed cross-entropy of the targets under the pad-masked softmax.
template <class Real>
T<Real> finetune_loss(nk::Graph<Real>& g, const T<Real>& logits,
                      std::span<const data::ItemIndex> targets);

}  // namespace mp4sr::obj
