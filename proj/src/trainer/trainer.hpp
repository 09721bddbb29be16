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

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "common/train_log.hpp"
#include "dataio/feature_store.hpp"
#include "dataio/split.hpp"
#include "evaluator/metrics.hpp"
#include "m2se/checkpoint.hpp"
#include "m2se/encoder.hpp"
#include "trainer/adam.hpp"
#include "trainer/config.hpp"

namespace mp4sr::train {

using EpochCallback = std::function<void(const char* stage, const EpochRecord&)>;

struct FinetuneResult {
  TrainLog log;
  std::size_t best_epoch = 0;  // epoch whose parameters the model holds
  double best_val = -1.0;      // validation R@20 at best_epoch
  std::size_t epochs_run = 0;
};

/// Training state for one run: model, optimizer and the run's random
/// stream. Every random draw after construction comes from one Rng seeded
/// with derive_seed(seed, "train"); the initial weights use
/// derive_seed(seed, "init").
template <class Real>
class Trainer {
 public:
  Trainer(TrainConfig cfg, const data::SplitBundle& split, const data::FeatureBank& bank);

  const TrainConfig& config() const { return cfg_; }
  m2se::Model<Real>& model() { return model_; }
  const m2se::Model<Real>& model() const { return model_; }
  const AdamState<Real>& optimizer() const { return adam_; }
  Rng& rng() { return rng_; }
  std::size_t epoch() const { return epoch_; }

  /// Forgets the optimizer moments and restarts epoch counting, e.g. when
  /// moving from pre-training to fine-tuning.
  void start_stage();

  /// Instances used by each stage. Cold-start pre-training sees warm items
  /// only.
  const std::vector<data::TrainingInstance>& pretrain_instances() const { return pre_inst_; }
  const std::vector<data::TrainingInstance>& finetune_instances() const { return ft_inst_; }

  // One optimizer step on the given instances; returns the summed loss.
  double pretrain_step(std::span<const data::TrainingInstance* const> batch);
  double finetune_step(std::span<const data::TrainingInstance* const> batch,
                       const m2se::ItemTable<Real>* stale_catalog = nullptr);
  double e2e_step(std::span<const data::TrainingInstance* const> batch);

  /// One pass over shuffled instances; returns the mean loss per instance.
  double pretrain_epoch();
  double finetune_epoch();

  /// Runs the configured pre-training epochs (no early stopping).
  TrainLog pretrain(const EpochCallback& cb = {});
  /// Fine-tunes (jointly with the pre-training loss for e2e) with early
  /// stopping on validation R@20 and returns the best epoch's model.
  FinetuneResult finetune(const EpochCallback& cb = {});

  /// Eval-mode mean fine-tuning loss over the instances.
  double eval_loss(const std::vector<data::TrainingInstance>& instances) const;
  /// Ranking metrics of the current model.
  eval::MetricsReport evaluate(data::EvalMode mode, bool groups = false) const;

  m2se::Checkpoint checkpoint(const std::string& config_json) const;
  /// Restores parameters, optimizer, rng, epoch and best metric.
  void restore(const m2se::Checkpoint& ck);
  /// Copies parameters only (pre-trained initialization).
  void load_parameters(const m2se::Checkpoint& ck);

 private:
  bool use_id() const { return !cfg_.variants.cold_start; }
  void apply_gradients();
  std::vector<std::vector<const data::TrainingInstance*>> shuffled_batches(
      const std::vector<data::TrainingInstance>& inst);
  data::TrainingBatch assemble(std::span<const data::TrainingInstance* const> batch) const;
  template <class StepFn>
  double run_epoch(const std::vector<data::TrainingInstance>& inst, StepFn step);

  TrainConfig cfg_;
  const data::SplitBundle& split_;
  const data::FeatureBank& bank_;
  m2se::Model<Real> model_;
  AdamState<Real> adam_;
  Rng rng_;
  std::size_t epoch_ = 0;
  double best_metric_ = -1.0;
  std::vector<data::TrainingInstance> pre_inst_, ft_inst_, test_inst_;
};

/// One row of an ablation or variant comparison.
struct VariantResult {
  std::string label;
  Variants variants;
  TrainLog pretrain_log;
  FinetuneResult finetune;
  eval::MetricsReport test;
};

/// Full pipeline for one variant: pre-training unless no-pretrain or e2e,
/// then fine-tuning, then test evaluation (cold users only for cold-start).
/// `init` replaces pre-training with the given checkpoint's parameters.
template <class Real>
VariantResult run_variant(const TrainConfig& cfg, const data::SplitBundle& split,
                          const data::FeatureBank& bank, const std::string& label,
                          const m2se::Checkpoint* init = nullptr, const EpochCallback& cb = {});

/// The in-scope ablation rows: full model and its seven variants.
std::vector<std::pair<std::string, Variants>> ablation_variants();

template <class Real>
std::vector<VariantResult> run_ablation(const TrainConfig& cfg, const data::SplitBundle& split,
                                        const data::FeatureBank& bank,
                                        const EpochCallback& cb = {});

/// Table with one row per variant: test R@K, N@K and the best epoch.
std::string format_comparison(const std::vector<VariantResult>& rows);
void write_comparison_csv(const std::vector<VariantResult>& rows, const std::filesystem::path& path);

struct GridPoint {
  double learning_rate;
  std::size_t batch_size;
  double weight_decay;
  double best_val = -1.0;
};

/// Learning rate x batch size x weight decay search space.
std::vector<GridPoint> default_grid();

/// Runs the pipeline at every point and fills best_val; returns the points
/// sorted by descending validation R@20 (stable).
template <class Real>
std::vector<GridPoint> grid_search(const TrainConfig& cfg, const data::SplitBundle& split,
                                   const data::FeatureBank& bank, std::vector<GridPoint> grid);

}  // namespace mp4sr::train
