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

#include "evaluator/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "common/errors.hpp"
#include "m2se/encoder.hpp"
#include "objectives/losses.hpp"

namespace mp4sr::eval {

template <class Real>
std::size_t rank_of(std::span<const Real> logits, ItemIndex target) {
  if (target <= data::kPad || static_cast<std::size_t>(target) >= logits.size()) {
    throw ContractError("rank_of: target " + std::to_string(target) + " not in catalog");
  }
  const auto t = static_cast<std::size_t>(target);
  const Real lt = logits[t];
  std::size_t rank = 1;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > lt || (logits[i] == lt && i < t)) ++rank;
  return rank;
}

template <class Real>
std::vector<ItemIndex> ranked_list(std::span<const Real> logits) {
  std::vector<ItemIndex> items(logits.size() - 1);
  std::iota(items.begin(), items.end(), ItemIndex{1});
  std::stable_sort(items.begin(), items.end(), [&](ItemIndex a, ItemIndex b) {
    return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
  });
  return items;
}

namespace {

std::size_t position_of(std::span<const ItemIndex> ranked, ItemIndex target, std::size_t k) {
  if (k < 1) throw ContractError("cutoff K must be at least 1");
  auto it = std::find(ranked.begin(), ranked.end(), target);
  if (it == ranked.end()) throw ContractError("target " + std::to_string(target) + " not in ranking");
  return static_cast<std::size_t>(it - ranked.begin()) + 1;
}

}  // namespace

double recall_from_rank(std::size_t rank, std::size_t k) { return rank <= k ? 1.0 : 0.0; }

double ndcg_from_rank(std::size_t rank, std::size_t k) {
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

double recall_at_k(std::span<const ItemIndex> ranked, ItemIndex target, std::size_t k) {
  return recall_from_rank(position_of(ranked, target, k), k);
}

double ndcg_at_k(std::span<const ItemIndex> ranked, ItemIndex target, std::size_t k) {
  return ndcg_from_rank(position_of(ranked, target, k), k);
}

const MetricRow& MetricsReport::row(const std::string& label) const {
  for (const auto& r : rows)
    if (r.label == label) return r;
  throw ContractError("metrics report has no row '" + label + "'");
}

MetricRow summarize(const std::string& label, std::span<const std::size_t> ranks) {
  MetricRow row;
  row.label = label;
  row.users = ranks.size();
  if (ranks.empty()) return row;
  for (std::size_t c = 0; c < kCutoffs.size(); ++c) {
    double r = 0, n = 0;
    for (auto rank : ranks) {
      r += recall_from_rank(rank, kCutoffs[c]);
      n += ndcg_from_rank(rank, kCutoffs[c]);
    }
    row.recall[c] = r / static_cast<double>(ranks.size());
    row.ndcg[c] = n / static_cast<double>(ranks.size());
  }
  return row;
}

template <class Real>
std::vector<std::size_t> rank_instances(const m2se::Model<Real>& model, const data::FeatureBank& bank,
                                        std::span<const data::TrainingInstance> instances,
                                        bool use_id, std::size_t batch_size) {
  if (batch_size < 1) throw ConfigError("evaluation batch size must be at least 1");
  std::vector<std::size_t> ranks;
  if (instances.empty()) return ranks;
  nk::Graph<Real> g(false);
  Rng rng(0);
  const auto catalog = m2se::make_catalog_table(g, model, bank, rng, false);
  m2se::ForwardOptions fwd;
  fwd.stage = data::Stage::kFinetune;
  fwd.training = false;
  fwd.use_id = use_id;
  const std::size_t width = model.config.num_items + 1;
  for (std::size_t start = 0; start < instances.size(); start += batch_size) {
    const std::size_t end = std::min(instances.size(), start + batch_size);
    std::vector<const data::TrainingInstance*> ptr;
    std::size_t longest = 1;
    for (std::size_t k = start; k < end; ++k) {
      ptr.push_back(&instances[k]);
      longest = std::max(longest, ptr.back()->prefix.size());
    }
    const auto batch = data::assemble_batch(ptr, longest);
    const auto acts = m2se::m2se_forward(g, model, catalog, batch, fwd, rng);
    const auto logits = obj::finetune_logits(g, acts.text.h, acts.image.h, catalog,
                                             use_id ? model.id_table : m2se::T<Real>());
    for (std::size_t r = 0; r < batch.size; ++r) {
      ranks.push_back(rank_of<Real>(logits.data().subspan(r * width, width), batch.targets[r]));
    }
  }
  return ranks;
}

template <class Real>
EvalDetail rank_users(const m2se::Model<Real>& model, const data::FeatureBank& bank,
                      const data::SplitBundle& split, const EvalOptions& opt) {
  if (opt.batch_size < 1) throw ConfigError("evaluation batch size must be at least 1");
  const auto instances = data::evaluation_instances(split, opt.mode, model.config.max_len);
  std::vector<std::uint8_t> is_cold;
  if (opt.cold) is_cold = data::cold_item_partition(split, opt.cold_threshold).is_cold;

  EvalDetail out;
  for (std::size_t u = 0; u < instances.size(); ++u)
    if (!opt.cold || is_cold[static_cast<std::size_t>(instances[u].target)]) out.users.push_back(u);
  if (out.users.empty()) return out;

  std::vector<data::TrainingInstance> chosen;
  chosen.reserve(out.users.size());
  for (auto u : out.users) chosen.push_back(instances[u]);
  out.ranks = rank_instances(model, bank, chosen, opt.use_id && !opt.cold, opt.batch_size);
  return out;
}

std::vector<std::size_t> length_groups(const data::SplitBundle& split,
                                       std::span<const std::size_t> users, std::size_t groups) {
  std::vector<std::size_t> order(users.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return split.users[users[a]].train.size() < split.users[users[b]].train.size();
  });
  std::vector<std::size_t> group(users.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) group[order[pos]] = pos * groups / order.size();
  return group;
}

template <class Real>
MetricsReport evaluate(const m2se::Model<Real>& model, const data::FeatureBank& bank,
                       const data::SplitBundle& split, const EvalOptions& opt) {
  const auto detail = rank_users(model, bank, split, opt);
  MetricsReport report;
  report.empty = detail.users.empty();
  report.rows.push_back(summarize(opt.cold ? "cold" : "all", detail.ranks));
  if (opt.groups && !report.empty) {
    const auto group = length_groups(split, detail.users);
    for (std::size_t k = 0; k < 5; ++k) {
      std::vector<std::size_t> ranks;
      std::size_t lo = SIZE_MAX, hi = 0;
      for (std::size_t u = 0; u < detail.users.size(); ++u) {
        if (group[u] != k) continue;
        ranks.push_back(detail.ranks[u]);
        const std::size_t len = split.users[detail.users[u]].train.size();
        lo = std::min(lo, len);
        hi = std::max(hi, len);
      }
      std::string label = "group" + std::to_string(k + 1);
      if (!ranks.empty()) label += "[" + std::to_string(lo) + "-" + std::to_string(hi) + "]";
      report.rows.push_back(summarize(label, ranks));
    }
  }
  return report;
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::setprecision(17) << "group,users,R@5,R@10,R@20,N@5,N@10,N@20\n";
  for (const auto& r : report.rows) {
    out << r.label << ',' << r.users;
    for (double v : r.recall) out << ',' << v;
    for (double v : r.ndcg) out << ',' << v;
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string format_metrics_table(const MetricsReport& report) {
  std::ostringstream s;
  if (report.empty) s << "(empty evaluation set)\n";
  s << std::left << std::setw(16) << "group" << std::right << std::setw(7) << "users";
  for (auto k : kCutoffs) s << std::setw(9) << ("R@" + std::to_string(k));
  for (auto k : kCutoffs) s << std::setw(9) << ("N@" + std::to_string(k));
  s << '\n' << std::fixed << std::setprecision(4);
  for (const auto& r : report.rows) {
    s << std::left << std::setw(16) << r.label << std::right << std::setw(7) << r.users;
    for (double v : r.recall) s << std::setw(9) << v;
    for (double v : r.ndcg) s << std::setw(9) << v;
    s << '\n';
  }
  return s.str();
}

void export_loss_trajectory(const std::vector<std::pair<std::string, TrainLog>>& runs,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::setprecision(17) << "run_id,epoch,log_train_loss,log_test_loss\n";
  for (const auto& [id, log] : runs) {
    for (const auto& e : log.epochs) {
      if (!e.test_loss) throw ContractError("run '" + id + "' has no test loss; enable diagnostics");
      if (!(e.train_loss > 0.0) || !(*e.test_loss > 0.0))
        throw ContractError("run '" + id + "' has a non-positive loss at epoch " + std::to_string(e.epoch));
      out << id << ',' << e.epoch << ',' << std::log(e.train_loss) << ',' << std::log(*e.test_loss)
          << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

template std::size_t rank_of<float>(std::span<const float>, ItemIndex);
template std::size_t rank_of<double>(std::span<const double>, ItemIndex);
template std::vector<ItemIndex> ranked_list<float>(std::span<const float>);
template std::vector<ItemIndex> ranked_list<double>(std::span<const double>);
template std::vector<std::size_t> rank_instances<float>(const m2se::Model<float>&, const data::FeatureBank&,
                                                        std::span<const data::TrainingInstance>, bool, std::size_t);
template std::vector<std::size_t> rank_instances<double>(const m2se::Model<double>&, const data::FeatureBank&,
                                                         std::span<const data::TrainingInstance>, bool, std::size_t);
template EvalDetail rank_users<float>(const m2se::Model<float>&, const data::FeatureBank&,
                                      const data::SplitBundle&, const EvalOptions&);
template EvalDetail rank_users<double>(const m2se::Model<double>&, const data::FeatureBank&,
                                       const data::SplitBundle&, const EvalOptions&);
template MetricsReport evaluate<float>(const m2se::Model<float>&, const data::FeatureBank&,
                                       const data::SplitBundle&, const EvalOptions&);
template MetricsReport evaluate<double>(const m2se::Model<double>&, const data::FeatureBank&,
                                        const data::SplitBundle&, const EvalOptions&);

}  // namespace mp4sr::eval
