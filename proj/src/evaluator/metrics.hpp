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

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "common/train_log.hpp"
#include "dataio/feature_store.hpp"
#include "dataio/split.hpp"
#include "m2se/model.hpp"

namespace mp4sr::eval {

using data::ItemIndex;

inline constexpr std::array<std::size_t, 3> kCutoffs = {5, 10, 20};

/// 1-based rank of `target` among items 1..N of a [N + 1] logit row, ties
/// broken by ascending item index. Entry 0 (pad) is ignored.
template <class Real>
std::size_t rank_of(std::span<const Real> logits, ItemIndex target);

/// All real items by descending logit, ties by ascending index.
template <class Real>
std::vector<ItemIndex> ranked_list(std::span<const Real> logits);

/// 1 when target is among the first K entries of `ranked`.
double recall_at_k(std::span<const ItemIndex> ranked, ItemIndex target, std::size_t k);
/// 1 / log2(rank + 1) when target ranks within K, else 0.
double ndcg_at_k(std::span<const ItemIndex> ranked, ItemIndex target, std::size_t k);
/// Same metrics from a known rank.
double recall_from_rank(std::size_t rank, std::size_t k);
double ndcg_from_rank(std::size_t rank, std::size_t k);

struct MetricRow {
  std::string label;
  std::size_t users = 0;
  std::array<double, 3> recall{};  // at kCutoffs
  std::array<double, 3> ndcg{};
};

/// Rows of averaged metrics; `empty` marks an evaluation with no users.
struct MetricsReport {
  std::vector<MetricRow> rows;
  bool empty = false;

  const MetricRow& row(const std::string& label) const;
};

/// Mean metrics over the given ranks.
MetricRow summarize(const std::string& label, std::span<const std::size_t> ranks);

struct EvalOptions {
  data::EvalMode mode = data::EvalMode::kTest;
  bool cold = false;      // only users whose target is cold, scored without IDs
  bool groups = false;    // add five equal-frequency train-length groups
  bool use_id = true;     // ID embeddings in the scoring path
  std::size_t batch_size = 256;
  std::size_t cold_threshold = 10;
};

/// Per-user outcome of one evaluation pass.
struct EvalDetail {
  std::vector<std::size_t> users;  // indices into split.users
  std::vector<std::size_t> ranks;
};

/// Ranks every user's target over the full catalog with a frozen model.
// Rank of each instance's target under eval-mode fine-tune scoring.
template <class Real>
std::vector<std::size_t> rank_instances(const m2se::Model<Real>& model, const data::FeatureBank& bank,
                                        std::span<const data::TrainingInstance> instances,
                                        bool use_id, std::size_t batch_size = 256);

template <class Real>
EvalDetail rank_users(const m2se::Model<Real>& model, const data::FeatureBank& bank,
                      const data::SplitBundle& split, const EvalOptions& opt);

template <class Real>
MetricsReport evaluate(const m2se::Model<Real>& model, const data::FeatureBank& bank,
                       const data::SplitBundle& split, const EvalOptions& opt);

/// Five contiguous equal-frequency groups of users sorted by train length
/// (ties by user order); returns the group of each listed user.
std::vector<std::size_t> length_groups(const data::SplitBundle& split,
                                       std::span<const std::size_t> users, std::size_t groups = 5);

/// CSV header: group,users,R@5,R@10,R@20,N@5,N@10,N@20.
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);
std::string format_metrics_table(const MetricsReport& report);

/// Rows run_id,epoch,log_train_loss,log_test_loss for each run's epochs.
/// Every epoch must carry a positive train and test loss.
void export_loss_trajectory(const std::vector<std::pair<std::string, TrainLog>>& runs,
                            const std::filesystem::path& path);

}  // namespace mp4sr::eval
