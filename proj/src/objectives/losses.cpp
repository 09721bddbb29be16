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

#include "objectives/losses.hpp"

#include <cmath>

#include "common/errors.hpp"

namespace mp4sr::obj {

using nk::Graph;
using nk::Mask;

namespace {

constexpr double kNormEps = 1e-12;

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
}

void check_pair(const char* op, std::size_t b, std::initializer_list<std::size_t> rows) {
  if (b == 0) throw ContractError(std::string(op) + ": empty batch");
  for (auto r : rows)
    if (r != b) throw DimensionError(std::string(op) + ": row counts differ");
}

}  // namespace

double similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("similarity: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / ((std::sqrt(na) + kNormEps) * (std::sqrt(nb) + kNormEps));
}

template <class Real>
T<Real> cosine_matrix(Graph<Real>& g, const T<Real>& a, const T<Real>& b) {
  const auto eps = static_cast<Real>(kNormEps);
  return g.matmul(g.l2_normalize(a, eps), g.transpose(g.l2_normalize(b, eps)));
}

template <class Real>
T<Real> nip_loss(Graph<Real>& g, const T<Real>& m_hat, const T<Real>& m_tilde, const T<Real>& z,
                 double tau) {
  check_tau(tau);
  const std::size_t b = m_hat.dim(0);
  check_pair("nip_loss", b, {m_tilde.dim(0), z.dim(0)});
  const auto inv_tau = static_cast<Real>(1.0 / tau);
  // Row j holds [sim(m_hat_j, z_.) | sim(m_tilde_j, z_.)] / tau.
  auto logits = g.scale(g.concat_cols(cosine_matrix(g, m_hat, z), cosine_matrix(g, m_tilde, z)),
                        inv_tau);
  Mask all(b * 2 * b, 1), pos(b * 2 * b, 0);
  for (std::size_t j = 0; j < b; ++j) {
    pos[j * 2 * b + j] = 1;
    pos[j * 2 * b + b + j] = 1;
  }
  return g.sum(g.sub(g.logsumexp(logits, all), g.logsumexp(logits, pos)));
}

namespace {

// Sum over rows of -log f(a_j, b_j) / (sum_j' f(a_j, b_j') + sum_{j' != j} f(a_j, a_j')).
template <class Real>
T<Real> cmcl_direction(Graph<Real>& g, const T<Real>& a, const T<Real>& b, Real inv_tau) {
  const std::size_t n = a.dim(0);
  auto logits = g.scale(g.concat_cols(cosine_matrix(g, a, b), cosine_matrix(g, a, a)), inv_tau);
  Mask den(n * 2 * n, 1), num(n * 2 * n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    den[j * 2 * n + n + j] = 0;
    num[j * 2 * n + j] = 1;
  }
  return g.sum(g.sub(g.logsumexp(logits, den), g.logsumexp(logits, num)));
}

}  // namespace

template <class Real>
T<Real> cmcl_loss(Graph<Real>& g, const T<Real>& m_hat, const T<Real>& m_tilde, double tau) {
  check_tau(tau);
  check_pair("cmcl_loss", m_hat.dim(0), {m_tilde.dim(0)});
  const auto inv_tau = static_cast<Real>(1.0 / tau);
  return g.scale(g.add(cmcl_direction(g, m_hat, m_tilde, inv_tau),
                       cmcl_direction(g, m_tilde, m_hat, inv_tau)),
                 Real(0.5));
}

template <class Real>
Projected<Real> project(Graph<Real>& g, const m2se::ProjectionParams<Real>& p,
                        const T<Real>& h_text, const T<Real>& h_image, bool identity) {
  if (identity) return {h_text, h_image, h_image, h_text};
  auto lin = [&](const T<Real>& h, const T<Real>& w, const T<Real>& bias) {
    return g.add_broadcast(g.matmul(h, w), bias);
  };
  return {lin(h_text, p.w_text, p.b_text), lin(h_image, p.w_text, p.b_text),
          lin(h_image, p.w_image, p.b_image), lin(h_text, p.w_image, p.b_image)};
}

template <class Real>
PretrainLossParts<Real> pretrain_loss(Graph<Real>& g, const m2se::Model<Real>& m,
                                      const m2se::SequenceActivations<Real>& acts,
                                      const m2se::ItemTable<Real>& table,
                                      std::span<const data::ItemIndex> targets, double tau,
                                      double lambda, const PretrainFlags& flags) {
  if (flags.no_nip && flags.no_cmcl) {
    throw ConfigError("disabling both NIP and CMCL leaves no pre-training objective");
  }
  check_tau(tau);
  const auto proj = project(g, m.projection, acts.text.h, acts.image.h, flags.no_proj);
  PretrainLossParts<Real> out;
  const auto zero = T<Real>::scalar(Real(0));
  out.nip_text = out.nip_image = out.cmcl_text = out.cmcl_image = zero;
  if (!flags.no_nip) {
    std::vector<std::int64_t> slot(targets.size());
    for (std::size_t j = 0; j < targets.size(); ++j) {
      slot[j] = table.slot.at(static_cast<std::size_t>(targets[j]));
      if (targets[j] == data::kPad || slot[j] < 0)
        throw ContractError("pretrain_loss: target " + std::to_string(targets[j]) + " not encoded");
    }
    out.nip_text = nip_loss(g, proj.hat_text, proj.tilde_text, g.gather_rows(table.text, slot), tau);
    out.nip_image =
        nip_loss(g, proj.hat_image, proj.tilde_image, g.gather_rows(table.image, slot), tau);
  }
  if (!flags.no_cmcl) {
    out.cmcl_text = cmcl_loss(g, proj.hat_text, proj.tilde_text, tau);
    out.cmcl_image = cmcl_loss(g, proj.hat_image, proj.tilde_image, tau);
  }
  out.total = g.add(g.add(out.nip_text, out.nip_image),
                    g.scale(g.add(out.cmcl_text, out.cmcl_image), static_cast<Real>(lambda)));
  return out;
}

template <class Real>
T<Real> finetune_logits(Graph<Real>& g, const T<Real>& h_text, const T<Real>& h_image,
                        const m2se::ItemTable<Real>& catalog, const T<Real>& id_table) {
  const std::size_t n = catalog.slot.size() - 1;
  std::vector<std::int64_t> rows(n + 1);
  rows[0] = -1;
  for (std::size_t i = 1; i <= n; ++i) {
    rows[i] = catalog.slot[i];
    if (rows[i] < 0) throw ContractError("finetune_logits: item " + std::to_string(i) + " missing");
  }
  auto out_text = g.gather_rows(catalog.text, rows);
  auto out_image = g.gather_rows(catalog.image, rows);
  if (id_table.defined()) {
    out_text = g.add(out_text, id_table);
    out_image = g.add(out_image, id_table);
  }
  return g.add(g.matmul(h_text, g.transpose(out_text)), g.matmul(h_image, g.transpose(out_image)));
}

Mask catalog_mask(std::size_t rows, std::size_t num_items) {
  Mask keep(rows * (num_items + 1), 1);
  for (std::size_t r = 0; r < rows; ++r) keep[r * (num_items + 1)] = 0;
  return keep;
}

template <class Real>
T<Real> finetune_probabilities(Graph<Real>& g, const T<Real>& logits) {
  return g.masked_softmax(logits, catalog_mask(logits.dim(0), logits.dim(1) - 1));
}

template <class Real>
T<Real> finetune_loss(Graph<Real>& g, const T<Real>& logits,
                      std::span<const data::ItemIndex> targets) {
  const std::size_t b = logits.dim(0), width = logits.dim(1);
  if (targets.size() != b) throw DimensionError("finetune_loss: one target per row required");
  Mask pick(b * width, 0);
  for (std::size_t r = 0; r < b; ++r) {
    const auto t = targets[r];
    if (t <= data::kPad || static_cast<std::size_t>(t) >= width) {
      throw ContractError("finetune_loss: target " + std::to_string(t) + " is not a real item");
    }
    pick[r * width + static_cast<std::size_t>(t)] = 1;
  }
  // Log-sum-exp over a single kept entry returns that logit exactly.
  return g.sum(g.sub(g.logsumexp(logits, catalog_mask(b, width - 1)), g.logsumexp(logits, pick)));
}

#define MP4SR_OBJ_INSTANTIATE(R)                                                                 \
  template T<R> cosine_matrix<R>(Graph<R>&, const T<R>&, const T<R>&);                           \
  template T<R> nip_loss<R>(Graph<R>&, const T<R>&, const T<R>&, const T<R>&, double);           \
  template T<R> cmcl_loss<R>(Graph<R>&, const T<R>&, const T<R>&, double);                       \
  template Projected<R> project<R>(Graph<R>&, const m2se::ProjectionParams<R>&, const T<R>&,     \
                                   const T<R>&, bool);                                           \
  template PretrainLossParts<R> pretrain_loss<R>(                                                \
      Graph<R>&, const m2se::Model<R>&, const m2se::SequenceActivations<R>&,                     \
      const m2se::ItemTable<R>&, std::span<const data::ItemIndex>, double, double,               \
      const PretrainFlags&);                                                                     \
  template T<R> finetune_logits<R>(Graph<R>&, const T<R>&, const T<R>&,                          \
                                   const m2se::ItemTable<R>&, const T<R>&);                      \
  template T<R> finetune_probabilities<R>(Graph<R>&, const T<R>&);                               \
  template T<R> finetune_loss<R>(Graph<R>&, const T<R>&, std::span<const data::ItemIndex>);

MP4SR_OBJ_INSTANTIATE(float)
MP4SR_OBJ_INSTANTIATE(double)

}  // namespace mp4sr::obj
