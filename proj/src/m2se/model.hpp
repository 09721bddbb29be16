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
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "numkernel/tensor.hpp"

namespace mp4sr::m2se {

template <class Real>
using T = nk::Tensor<Real>;

/// Architecture hyperparameters.
struct ModelConfig {
  std::size_t feature_dim = 768;  // d, width of the stored feature rows
  std::size_t attn_dim = 64;      // d_a
  std::size_t hidden = 64;        // d_0
  std::size_t experts = 8;        // O
  std::size_t layers = 2;         // L
  std::size_t heads = 2;
  std::size_t max_len = 50;
  double dropout = 0.2;  // inside the MoE experts and the Transformer
  std::size_t num_items = 0;
  bool shared_encoders = false;  // one encoder instance for both modalities

  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
};

/// Attention pooling plus a dense mixture of experts for one modality.
/// Expert k occupies columns [k*d_0, (k+1)*d_0) of `expert_w`, and row k of
/// the layer-norm affines.
template <class Real>
struct ModalityEncoderParams {
  T<Real> attn_w1;   // d x d_a
  T<Real> attn_b1;   // d_a
  T<Real> attn_w2;   // d_a x 1
  T<Real> attn_b2;   // 1
  T<Real> expert_w;  // d x (O * d_0)
  T<Real> expert_b;  // O * d_0
  T<Real> expert_ln_g;  // O x d_0
  T<Real> expert_ln_b;  // O x d_0
  T<Real> gate_w;    // d x O
  T<Real> gate_b;    // O
};

template <class Real>
struct TransformerLayerParams {
  T<Real> ln1_g, ln1_b;
  T<Real> wq, bq, wk, bk, wv, bv, wo, bo;  // d_0 x d_0 and d_0
  T<Real> ln2_g, ln2_b;
  T<Real> ff1_w, ff1_b;  // d_0 x 4d_0, 4d_0
  T<Real> ff2_w, ff2_b;  // 4d_0 x d_0, d_0
};

template <class Real>
struct TransformerParams {
  T<Real> pos;  // max_len x d_0, row max_len-1 is the most recent position
  std::vector<TransformerLayerParams<Real>> layers;
  T<Real> final_g, final_b;
};

/// Maps sequence representations into the text and image spaces.
template <class Real>
struct ProjectionParams {
  T<Real> w_text, b_text;
  T<Real> w_image, b_image;
};

/// A named trainable tensor; `decay` marks weight matrices eligible for
/// decoupled weight decay.
template <class Real>
struct ParamEntry {
  std::string name;
  T<Real> tensor;
  bool decay = false;
};

template <class Real>
struct Model {
  ModelConfig config;
  ModalityEncoderParams<Real> text, image;
  TransformerParams<Real> transformer;
  ProjectionParams<Real> projection;
  T<Real> id_table;  // (num_items + 1) x d_0, row 0 is the pad and stays zero

  /// Parameters in a fixed order with stable names. Aliased tensors (shared
  /// encoders) are listed once.
  std::vector<ParamEntry<Real>> parameters() const;
  void zero_grad();
};

/// Weights from a truncated normal(0, 0.02), biases and the pad row zero,
/// layer-norm gains one.
template <class Real>
Model<Real> init_model(const ModelConfig& config, Rng& rng);

/// Copies every parameter into a model of another precision.
template <class To, class From>
Model<To> cast_model(const Model<From>& m);

/// Overwrites the values of `dst` with those of `src` (same names, shapes).
template <class Real>
void copy_parameters(const Model<Real>& src, Model<Real>& dst);

}  // namespace mp4sr::m2se
