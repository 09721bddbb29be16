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

#include "dataio/synth.hpp"
#include "m2se/model.hpp"
#include "objectives/losses.hpp"

namespace mp4sr::train {

/// Ablation and protocol switches.
struct Variants {
  bool resnet_features = false;  // label only: features are whatever the store holds
  bool no_nip = false;
  bool no_cmcl = false;
  bool no_cmixup = false;
  bool no_pretrain = false;
  bool no_proj = false;
  bool e2e = false;
  bool shared_encoders = false;
  bool cold_start = false;

  /// Sets the flag called `name` (as listed by variant_names()); throws
  /// ConfigError for unknown names.
  void set(const std::string& name);
  std::vector<std::string> names() const;
  /// Rejects contradictory combinations with ConfigError.
  void validate() const;
  obj::PretrainFlags pretrain_flags() const { return {no_nip, no_cmcl, no_proj}; }
};

const std::vector<std::string>& variant_names();

/// Cadence at which fine-tuning recomputes the catalog's modality
/// embeddings for the output layer.
enum class Refresh { kStep, kEpoch };

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 1024;
  std::size_t pretrain_epochs = 300;
  std::size_t finetune_epochs = 200;  // upper bound; early stopping usually ends sooner
  double rho = 0.2;                   // sequence dropout ratio, pre-training only
  double tau = 0.07;
  double lambda = 0.01;
  std::size_t experts = 8;
  std::size_t attn_dim = 64;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t max_len = 50;
  double dropout = 0.2;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::size_t patience = 10;
  bool early_stop = true;
  Refresh refresh = Refresh::kStep;
  bool diagnostic = false;  // log eval-mode train/test fine-tuning losses
  std::size_t eval_batch_size = 256;
  Variants variants;

  void validate() const;
  m2se::ModelConfig model_config(std::size_t feature_dim, std::size_t num_items) const;
};

/// Everything a CLI run needs: training settings plus inputs and outputs.
struct RunConfig {
  TrainConfig train;
  std::string interactions;  // TSV path
  std::string features;      // feature store path
  std::string output_dir = "out";
  std::size_t kcore = 5;  // 0 disables filtering
  data::SynthParams synth;
};

/// Parses a JSON object. Unknown keys, wrong types and invalid values
/// raise ConfigError naming the key.
RunConfig parse_run_config(const std::string& json_text);
/// Canonical JSON echo of every setting, keys sorted.
std::string run_config_json(const RunConfig& cfg);

}  // namespace mp4sr::train
