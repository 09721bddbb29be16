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

#include "m2se/model.hpp"

#include <algorithm>

#include "common/errors.hpp"

namespace mp4sr::m2se {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(feature_dim >= 1, "feature_dim must be positive");
  require(attn_dim >= 1, "attention dimension must be positive");
  require(hidden >= 1, "hidden size must be positive");
  require(experts >= 1, "number of experts must be at least 1");
  require(layers >= 1, "number of layers must be at least 1");
  require(heads >= 1 && hidden % heads == 0, "hidden size must be divisible by heads");
  require(max_len >= 1, "max_len must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(num_items >= 1, "catalog must contain at least one item");
}

namespace {

using nk::Shape;

template <class Real>
void list_encoder(std::vector<ParamEntry<Real>>& out, const std::string& p,
                  const ModalityEncoderParams<Real>& e) {
  out.push_back({p + ".attn_w1", e.attn_w1, true});
  out.push_back({p + ".attn_b1", e.attn_b1, false});
  out.push_back({p + ".attn_w2", e.attn_w2, true});
  out.push_back({p + ".attn_b2", e.attn_b2, false});
  out.push_back({p + ".expert_w", e.expert_w, true});
  out.push_back({p + ".expert_b", e.expert_b, false});
  out.push_back({p + ".expert_ln_g", e.expert_ln_g, false});
  out.push_back({p + ".expert_ln_b", e.expert_ln_b, false});
  out.push_back({p + ".gate_w", e.gate_w, true});
  out.push_back({p + ".gate_b", e.gate_b, false});
}

template <class Real>
T<Real> weight(Shape shape, Rng& rng) {
  auto t = T<Real>::zeros(std::move(shape), true);
  for (auto& v : t.data()) v = static_cast<Real>(rng.truncated_normal(0.02));
  return t;
}

template <class Real>
T<Real> filled(Shape shape, Real v) {
  auto t = T<Real>::zeros(std::move(shape), true);
  std::fill(t.data().begin(), t.data().end(), v);
  return t;
}

template <class Real>
ModalityEncoderParams<Real> init_encoder(const ModelConfig& c, Rng& rng) {
  const std::size_t d = c.feature_dim, da = c.attn_dim, d0 = c.hidden, o = c.experts;
  ModalityEncoderParams<Real> e;
  e.attn_w1 = weight<Real>({d, da}, rng);
  e.attn_b1 = filled<Real>({da}, 0);
  e.attn_w2 = weight<Real>({da, 1}, rng);
  e.attn_b2 = filled<Real>({1}, 0);
  e.expert_w = weight<Real>({d, o * d0}, rng);
  e.expert_b = filled<Real>({o * d0}, 0);
  e.expert_ln_g = filled<Real>({o, d0}, 1);
  e.expert_ln_b = filled<Real>({o, d0}, 0);
  e.gate_w = weight<Real>({d, o}, rng);
  e.gate_b = filled<Real>({o}, 0);
  return e;
}

template <class To, class From>
T<To> cast_tensor(const T<From>& t) {
  std::vector<To> v(t.data().begin(), t.data().end());
  return T<To>::from(t.shape(), std::move(v), true);
}

}  // namespace

template <class Real>
std::vector<ParamEntry<Real>> Model<Real>::parameters() const {
  std::vector<ParamEntry<Real>> out;
  list_encoder(out, "encoder.text", text);
  if (!config.shared_encoders) list_encoder(out, "encoder.image", image);
  out.push_back({"transformer.pos", transformer.pos, false});
  for (std::size_t l = 0; l < transformer.layers.size(); ++l) {
    const auto& y = transformer.layers[l];
    const std::string p = "transformer.layer" + std::to_string(l);
    out.push_back({p + ".ln1_g", y.ln1_g, false});
    out.push_back({p + ".ln1_b", y.ln1_b, false});
    out.push_back({p + ".wq", y.wq, true});
    out.push_back({p + ".bq", y.bq, false});
    out.push_back({p + ".wk", y.wk, true});
    out.push_back({p + ".bk", y.bk, false});
    out.push_back({p + ".wv", y.wv, true});
    out.push_back({p + ".bv", y.bv, false});
    out.push_back({p + ".wo", y.wo, true});
    out.push_back({p + ".bo", y.bo, false});
    out.push_back({p + ".ln2_g", y.ln2_g, false});
    out.push_back({p + ".ln2_b", y.ln2_b, false});
    out.push_back({p + ".ff1_w", y.ff1_w, true});
    out.push_back({p + ".ff1_b", y.ff1_b, false});
    out.push_back({p + ".ff2_w", y.ff2_w, true});
    out.push_back({p + ".ff2_b", y.ff2_b, false});
  }
  out.push_back({"transformer.final_g", transformer.final_g, false});
  out.push_back({"transformer.final_b", transformer.final_b, false});
  out.push_back({"projection.w_text", projection.w_text, true});
  out.push_back({"projection.b_text", projection.b_text, false});
  out.push_back({"projection.w_image", projection.w_image, true});
  out.push_back({"projection.b_image", projection.b_image, false});
  out.push_back({"id_table", id_table, false});
  return out;
}

template <class Real>
void Model<Real>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <class Real>
Model<Real> init_model(const ModelConfig& c, Rng& rng) {
  c.validate();
  const std::size_t d0 = c.hidden;
  Model<Real> m;
  m.config = c;
  m.text = init_encoder<Real>(c, rng);
  m.image = c.shared_encoders ? m.text : init_encoder<Real>(c, rng);
  m.transformer.pos = weight<Real>({c.max_len, d0}, rng);
  for (std::size_t l = 0; l < c.layers; ++l) {
    TransformerLayerParams<Real> y;
    y.ln1_g = filled<Real>({d0}, 1);
    y.ln1_b = filled<Real>({d0}, 0);
    y.wq = weight<Real>({d0, d0}, rng);
    y.bq = filled<Real>({d0}, 0);
    y.wk = weight<Real>({d0, d0}, rng);
    y.bk = filled<Real>({d0}, 0);
    y.wv = weight<Real>({d0, d0}, rng);
    y.bv = filled<Real>({d0}, 0);
    y.wo = weight<Real>({d0, d0}, rng);
    y.bo = filled<Real>({d0}, 0);
    y.ln2_g = filled<Real>({d0}, 1);
    y.ln2_b = filled<Real>({d0}, 0);
    y.ff1_w = weight<Real>({d0, 4 * d0}, rng);
    y.ff1_b = filled<Real>({4 * d0}, 0);
    y.ff2_w = weight<Real>({4 * d0, d0}, rng);
    y.ff2_b = filled<Real>({d0}, 0);
    m.transformer.layers.push_back(std::move(y));
  }
  m.transformer.final_g = filled<Real>({d0}, 1);
  m.transformer.final_b = filled<Real>({d0}, 0);
  m.projection.w_text = weight<Real>({d0, d0}, rng);
  m.projection.b_text = filled<Real>({d0}, 0);
  m.projection.w_image = weight<Real>({d0, d0}, rng);
  m.projection.b_image = filled<Real>({d0}, 0);
  m.id_table = weight<Real>({c.num_items + 1, d0}, rng);
  std::fill_n(m.id_table.data().begin(), d0, Real(0));
  return m;
}

template <class To, class From>
Model<To> cast_model(const Model<From>& src) {
  Model<To> dst;
  dst.config = src.config;
  auto enc = [](const ModalityEncoderParams<From>& e) {
    return ModalityEncoderParams<To>{cast_tensor<To>(e.attn_w1),     cast_tensor<To>(e.attn_b1),
                                     cast_tensor<To>(e.attn_w2),     cast_tensor<To>(e.attn_b2),
                                     cast_tensor<To>(e.expert_w),    cast_tensor<To>(e.expert_b),
                                     cast_tensor<To>(e.expert_ln_g), cast_tensor<To>(e.expert_ln_b),
                                     cast_tensor<To>(e.gate_w),      cast_tensor<To>(e.gate_b)};
  };
  dst.text = enc(src.text);
  dst.image = src.config.shared_encoders ? dst.text : enc(src.image);
  dst.transformer.pos = cast_tensor<To>(src.transformer.pos);
  for (const auto& y : src.transformer.layers) {
    dst.transformer.layers.push_back(TransformerLayerParams<To>{
        cast_tensor<To>(y.ln1_g), cast_tensor<To>(y.ln1_b), cast_tensor<To>(y.wq),
        cast_tensor<To>(y.bq),    cast_tensor<To>(y.wk),    cast_tensor<To>(y.bk),
        cast_tensor<To>(y.wv),    cast_tensor<To>(y.bv),    cast_tensor<To>(y.wo),
        cast_tensor<To>(y.bo),    cast_tensor<To>(y.ln2_g), cast_tensor<To>(y.ln2_b),
        cast_tensor<To>(y.ff1_w), cast_tensor<To>(y.ff1_b), cast_tensor<To>(y.ff2_w),
        cast_tensor<To>(y.ff2_b)});
  }
  dst.transformer.final_g = cast_tensor<To>(src.transformer.final_g);
  dst.transformer.final_b = cast_tensor<To>(src.transformer.final_b);
  dst.projection = {cast_tensor<To>(src.projection.w_text), cast_tensor<To>(src.projection.b_text),
                    cast_tensor<To>(src.projection.w_image),
                    cast_tensor<To>(src.projection.b_image)};
  dst.id_table = cast_tensor<To>(src.id_table);
  return dst;
}

template <class Real>
void copy_parameters(const Model<Real>& src, Model<Real>& dst) {
  auto s = src.parameters();
  auto d = dst.parameters();
  if (s.size() != d.size()) throw ContractError("copy_parameters: parameter lists differ");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].name != d[i].name || s[i].tensor.shape() != d[i].tensor.shape()) {
      throw ContractError("copy_parameters: mismatch at " + s[i].name);
    }
    std::copy(s[i].tensor.data().begin(), s[i].tensor.data().end(), d[i].tensor.data().begin());
  }
}

template struct Model<float>;
template struct Model<double>;
template Model<float> init_model<float>(const ModelConfig&, Rng&);
template Model<double> init_model<double>(const ModelConfig&, Rng&);
template Model<double> cast_model<double, float>(const Model<float>&);
template Model<float> cast_model<float, double>(const Model<double>&);
template Model<float> cast_model<float, float>(const Model<float>&);
template Model<double> cast_model<double, double>(const Model<double>&);
template void copy_parameters<float>(const Model<float>&, Model<float>&);
template void copy_parameters<double>(const Model<double>&, Model<double>&);

}  // namespace mp4sr::m2se
