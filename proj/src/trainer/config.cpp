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

#include "trainer/config.hpp"

#include <algorithm>
#include <functional>
#include <map>

#include "json.hpp"

#include "common/errors.hpp"

namespace mp4sr::train {

using nlohmann::json;

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {
      "resnet-features", "no-nip", "no-cmcl", "no-cmixup", "no-pretrain",
      "no-proj",         "e2e",    "shared-encoders", "cold-start"};
  return names;
}

namespace {

std::vector<bool Variants::*> variant_members() {
  return {&Variants::resnet_features, &Variants::no_nip,  &Variants::no_cmcl,
          &Variants::no_cmixup,       &Variants::no_pretrain, &Variants::no_proj,
          &Variants::e2e,             &Variants::shared_encoders, &Variants::cold_start};
}

}  // namespace

void Variants::set(const std::string& name) {
  const auto& names = variant_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown variant '" + name + "'");
  this->*variant_members()[static_cast<std::size_t>(it - names.begin())] = true;
}

std::vector<std::string> Variants::names() const {
  std::vector<std::string> out;
  const auto members = variant_members();
  for (std::size_t k = 0; k < members.size(); ++k)
    if (this->*members[k]) out.push_back(variant_names()[k]);
  return out;
}

void Variants::validate() const {
  if (e2e && no_pretrain)
    throw ConfigError("variants e2e and no-pretrain contradict: e2e trains the pre-training loss");
  if (no_nip && no_cmcl)
    throw ConfigError("variants no-nip and no-cmcl together leave no pre-training objective");
  if (no_pretrain && (no_nip || no_cmcl || no_cmixup || no_proj))
    throw ConfigError("pre-training ablations have no effect with no-pretrain");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(rho >= 0.0 && rho < 1.0, "rho must lie in [0, 1)");
  require(tau > 0.0, "tau must be positive");
  require(lambda >= 0.0, "lambda must be non-negative");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(patience >= 1, "patience must be at least 1");
  require(eval_batch_size >= 1, "eval_batch_size must be at least 1");
  require(max_len >= 1 && max_len <= 50, "max_len must lie in [1, 50]");
  variants.validate();
  model_config(1, 1).validate();
}

m2se::ModelConfig TrainConfig::model_config(std::size_t feature_dim, std::size_t num_items) const {
  m2se::ModelConfig c;
  c.feature_dim = feature_dim;
  c.attn_dim = attn_dim;
  c.hidden = hidden;
  c.experts = experts;
  c.layers = layers;
  c.heads = heads;
  c.max_len = max_len;
  c.dropout = dropout;
  c.num_items = num_items;
  c.shared_encoders = variants.shared_encoders;
  return c;
}

namespace {

template <class V>
V get_as(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<V>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

using Setter = std::function<void(RunConfig&, const json&)>;

template <class V>
Setter field(V TrainConfig::*m, std::string key) {
  return [m, key](RunConfig& c, const json& v) { c.train.*m = get_as<V>(v, key); };
}
template <class V>
Setter run_field(V RunConfig::*m, std::string key) {
  return [m, key](RunConfig& c, const json& v) { c.*m = get_as<V>(v, key); };
}
template <class V>
Setter synth_field(V data::SynthParams::*m, std::string key) {
  return [m, key](RunConfig& c, const json& v) { c.synth.*m = get_as<V>(v, key); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> s = {
      {"learning_rate", field(&TrainConfig::learning_rate, "learning_rate")},
      {"batch_size", field(&TrainConfig::batch_size, "batch_size")},
      {"pretrain_epochs", field(&TrainConfig::pretrain_epochs, "pretrain_epochs")},
      {"finetune_epochs", field(&TrainConfig::finetune_epochs, "finetune_epochs")},
      {"rho", field(&TrainConfig::rho, "rho")},
      {"tau", field(&TrainConfig::tau, "tau")},
      {"lambda", field(&TrainConfig::lambda, "lambda")},
      {"experts", field(&TrainConfig::experts, "experts")},
      {"attn_dim", field(&TrainConfig::attn_dim, "attn_dim")},
      {"hidden", field(&TrainConfig::hidden, "hidden")},
      {"layers", field(&TrainConfig::layers, "layers")},
      {"heads", field(&TrainConfig::heads, "heads")},
      {"max_len", field(&TrainConfig::max_len, "max_len")},
      {"dropout", field(&TrainConfig::dropout, "dropout")},
      {"weight_decay", field(&TrainConfig::weight_decay, "weight_decay")},
      {"seed", field(&TrainConfig::seed, "seed")},
      {"patience", field(&TrainConfig::patience, "patience")},
      {"early_stop", field(&TrainConfig::early_stop, "early_stop")},
      {"diagnostic", field(&TrainConfig::diagnostic, "diagnostic")},
      {"eval_batch_size", field(&TrainConfig::eval_batch_size, "eval_batch_size")},
      {"refresh",
       [](RunConfig& c, const json& v) {
         const auto s = get_as<std::string>(v, "refresh");
         if (s == "step") c.train.refresh = Refresh::kStep;
         else if (s == "epoch") c.train.refresh = Refresh::kEpoch;
         else throw ConfigError("config key 'refresh' must be \"step\" or \"epoch\"");
       }},
      {"variants",
       [](RunConfig& c, const json& v) {
         if (!v.is_array()) throw ConfigError("config key 'variants' must be a list of names");
         for (const auto& n : v) c.train.variants.set(get_as<std::string>(n, "variants"));
       }},
      {"interactions", run_field(&RunConfig::interactions, "interactions")},
      {"features", run_field(&RunConfig::features, "features")},
      {"output_dir", run_field(&RunConfig::output_dir, "output_dir")},
      {"kcore", run_field(&RunConfig::kcore, "kcore")},
      {"synth.n_users", synth_field(&data::SynthParams::n_users, "synth.n_users")},
      {"synth.n_items", synth_field(&data::SynthParams::n_items, "synth.n_items")},
      {"synth.d", synth_field(&data::SynthParams::d, "synth.d")},
      {"synth.signal_strength",
       synth_field(&data::SynthParams::signal_strength, "synth.signal_strength")},
  };
  return s;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  const auto& table = setters();
  for (const auto& [key, value] : doc.items()) {
    if (key == "synth") {
      if (!value.is_object()) throw ConfigError("config key 'synth' must be an object");
      for (const auto& [sk, sv] : value.items()) {
        auto it = table.find("synth." + sk);
        if (it == table.end()) throw ConfigError("unknown config key 'synth." + sk + "'");
        it->second(cfg, sv);
      }
      continue;
    }
    auto it = table.find(key);
    if (it == table.end() || key.starts_with("synth.")) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    it->second(cfg, value);
  }
  cfg.train.validate();
  return cfg;
}

std::string run_config_json(const RunConfig& c) {
  const auto& t = c.train;
  json j = {
      {"learning_rate", t.learning_rate},
      {"batch_size", t.batch_size},
      {"pretrain_epochs", t.pretrain_epochs},
      {"finetune_epochs", t.finetune_epochs},
      {"rho", t.rho},
      {"tau", t.tau},
      {"lambda", t.lambda},
      {"experts", t.experts},
      {"attn_dim", t.attn_dim},
      {"hidden", t.hidden},
      {"layers", t.layers},
      {"heads", t.heads},
      {"max_len", t.max_len},
      {"dropout", t.dropout},
      {"weight_decay", t.weight_decay},
      {"seed", t.seed},
      {"patience", t.patience},
      {"early_stop", t.early_stop},
      {"diagnostic", t.diagnostic},
      {"eval_batch_size", t.eval_batch_size},
      {"refresh", t.refresh == Refresh::kStep ? "step" : "epoch"},
      {"variants", t.variants.names()},
      {"interactions", c.interactions},
      {"features", c.features},
      {"output_dir", c.output_dir},
      {"kcore", c.kcore},
      {"synth",
       {{"n_users", c.synth.n_users},
        {"n_items", c.synth.n_items},
        {"d", c.synth.d},
        {"signal_strength", c.synth.signal_strength}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace mp4sr::train
