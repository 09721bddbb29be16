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

#include "trainer/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "common/errors.hpp"
#include "objectives/losses.hpp"

namespace mp4sr::train {

using data::TrainingInstance;
using m2se::T;

namespace {

// Training histories with cold items removed, for warm-only pre-training.
data::SplitBundle warm_only(const data::SplitBundle& split) {
  const auto part = data::cold_item_partition(split);
  data::SplitBundle out = split;
  for (auto& u : out.users) {
    std::erase_if(u.train, [&](data::ItemIndex i) { return part.is_cold[static_cast<std::size_t>(i)] != 0; });
  }
  return out;
}

}  // namespace

template <class Real>
Trainer<Real>::Trainer(TrainConfig cfg, const data::SplitBundle& split,
                       const data::FeatureBank& bank)
    : cfg_(std::move(cfg)), split_(split), bank_(bank), rng_(derive_seed(cfg_.seed, "train")) {
  cfg_.validate();
  if (bank.num_items() != split.num_items) {
    throw ContractError("feature bank covers " + std::to_string(bank.num_items()) +
                        " items but the split has " + std::to_string(split.num_items));
  }
  Rng init(derive_seed(cfg_.seed, "init"));
  model_ = m2se::init_model<Real>(cfg_.model_config(bank.dim(), split.num_items), init);
  ft_inst_ = data::build_instances(split, data::Stage::kFinetune, cfg_.max_len);
  pre_inst_ = cfg_.variants.cold_start
                  ? data::build_instances(warm_only(split), data::Stage::kPretrain, cfg_.max_len)
                  : data::build_instances(split, data::Stage::kPretrain, cfg_.max_len);
  test_inst_ = data::evaluation_instances(split, data::EvalMode::kTest, cfg_.max_len);
}

template <class Real>
void Trainer<Real>::start_stage() {
  adam_ = AdamState<Real>{};
  epoch_ = 0;
  best_metric_ = -1.0;
}

template <class Real>
data::TrainingBatch Trainer<Real>::assemble(std::span<const TrainingInstance* const> batch) const {
  std::size_t width = 1;
  for (const auto* i : batch) width = std::max(width, i->prefix.size());
  return data::assemble_batch(batch, width);
}

template <class Real>
void Trainer<Real>::apply_gradients() {
  adam_step(model_.parameters(), adam_, cfg_.learning_rate, cfg_.weight_decay);
}

template <class Real>
double Trainer<Real>::pretrain_step(std::span<const TrainingInstance* const> batch) {
  std::vector<TrainingInstance> dropped;
  dropped.reserve(batch.size());
  for (const auto* i : batch) dropped.push_back({m2se::sequence_dropout(i->prefix, cfg_.rho, rng_), i->target});
  std::vector<const TrainingInstance*> ptr;
  for (const auto& i : dropped) ptr.push_back(&i);
  const auto b = assemble(ptr);

  model_.zero_grad();
  nk::Graph<Real> g;
  const auto table = m2se::make_item_table(g, model_, bank_, m2se::batch_items(b), rng_, true);
  m2se::ForwardOptions opt;
  opt.mixup = !cfg_.variants.no_cmixup;
  const auto acts = m2se::m2se_forward(g, model_, table, b, opt, rng_);
  const auto parts = obj::pretrain_loss(g, model_, acts, table, b.targets, cfg_.tau, cfg_.lambda,
                                        cfg_.variants.pretrain_flags());
  g.backward(parts.total);
  apply_gradients();
  return parts.total.item();
}

template <class Real>
double Trainer<Real>::finetune_step(std::span<const TrainingInstance* const> batch,
                                    const m2se::ItemTable<Real>* stale_catalog) {
  const auto b = assemble(batch);
  model_.zero_grad();
  nk::Graph<Real> g;
  m2se::ItemTable<Real> input, live_catalog;
  if (stale_catalog) {
    input = m2se::make_item_table(g, model_, bank_, m2se::batch_items(b), rng_, true);
  } else {
    live_catalog = m2se::make_catalog_table(g, model_, bank_, rng_, true);
  }
  const auto& in_table = stale_catalog ? input : live_catalog;
  const auto& out_table = stale_catalog ? *stale_catalog : live_catalog;
  m2se::ForwardOptions opt;
  opt.stage = data::Stage::kFinetune;
  opt.use_id = use_id();
  const auto acts = m2se::m2se_forward(g, model_, in_table, b, opt, rng_);
  const auto logits = obj::finetune_logits(g, acts.text.h, acts.image.h, out_table,
                                           use_id() ? model_.id_table : T<Real>());
  const auto loss = obj::finetune_loss(g, logits, b.targets);
  g.backward(loss);
  apply_gradients();
  return loss.item();
}

template <class Real>
double Trainer<Real>::e2e_step(std::span<const TrainingInstance* const> batch) {
  std::vector<TrainingInstance> dropped;
  for (const auto* i : batch) dropped.push_back({m2se::sequence_dropout(i->prefix, cfg_.rho, rng_), i->target});
  std::vector<const TrainingInstance*> ptr;
  for (const auto& i : dropped) ptr.push_back(&i);
  const auto b_pre = assemble(ptr);
  const auto b_ft = assemble(batch);

  model_.zero_grad();
  nk::Graph<Real> g;
  const auto table = m2se::make_item_table(g, model_, bank_, m2se::batch_items(b_pre), rng_, true);
  m2se::ForwardOptions pre_opt;
  pre_opt.mixup = !cfg_.variants.no_cmixup;
  const auto pre_acts = m2se::m2se_forward(g, model_, table, b_pre, pre_opt, rng_);
  const auto parts = obj::pretrain_loss(g, model_, pre_acts, table, b_pre.targets, cfg_.tau,
                                        cfg_.lambda, cfg_.variants.pretrain_flags());
  const auto catalog = m2se::make_catalog_table(g, model_, bank_, rng_, true);
  m2se::ForwardOptions ft_opt;
  ft_opt.stage = data::Stage::kFinetune;
  ft_opt.use_id = use_id();
  const auto acts = m2se::m2se_forward(g, model_, catalog, b_ft, ft_opt, rng_);
  const auto logits = obj::finetune_logits(g, acts.text.h, acts.image.h, catalog,
                                           use_id() ? model_.id_table : T<Real>());
  const auto total = g.add(parts.total, obj::finetune_loss(g, logits, b_ft.targets));
  g.backward(total);
  apply_gradients();
  return total.item();
}

template <class Real>
std::vector<std::vector<const TrainingInstance*>> Trainer<Real>::shuffled_batches(
    const std::vector<TrainingInstance>& inst) {
  if (inst.empty()) throw EmptyDatasetError("no training instances for this stage");
  std::vector<std::size_t> order(inst.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng_.shuffle(order);
  std::vector<std::vector<const TrainingInstance*>> out;
  for (std::size_t s = 0; s < order.size(); s += cfg_.batch_size) {
    out.emplace_back();
    for (std::size_t k = s; k < std::min(order.size(), s + cfg_.batch_size); ++k)
      out.back().push_back(&inst[order[k]]);
  }
  return out;
}

template <class Real>
template <class StepFn>
double Trainer<Real>::run_epoch(const std::vector<TrainingInstance>& inst, StepFn step) {
  double total = 0;
  for (const auto& batch : shuffled_batches(inst)) total += step(batch);
  return total / static_cast<double>(inst.size());
}

template <class Real>
double Trainer<Real>::pretrain_epoch() {
  return run_epoch(pre_inst_, [&](const auto& b) { return pretrain_step(b); });
}

template <class Real>
double Trainer<Real>::finetune_epoch() {
  if (cfg_.refresh == Refresh::kEpoch) {
    nk::Graph<Real> g(false);
    Rng unused(0);
    const auto stale = m2se::make_catalog_table(g, model_, bank_, unused, false);
    return run_epoch(ft_inst_, [&](const auto& b) { return finetune_step(b, &stale); });
  }
  return run_epoch(ft_inst_, [&](const auto& b) { return finetune_step(b); });
}

template <class Real>
TrainLog Trainer<Real>::pretrain(const EpochCallback& cb) {
  TrainLog log;
  while (epoch_ < cfg_.pretrain_epochs) {
    const auto good = m2se::export_tensors(model_);
    double loss = 0;
    try {
      loss = pretrain_epoch();
    } catch (const NumericError& e) {
      m2se::import_tensors(model_, good);
      throw NumericError(std::string(e.what()) + " (pre-training epoch " +
                         std::to_string(epoch_ + 1) + "; parameters restored to epoch " +
                         std::to_string(epoch_) + ")");
    }
    ++epoch_;
    EpochRecord rec{epoch_, loss, std::nullopt, std::nullopt};
    log.append(rec);
    if (cb) cb("pretrain", rec);
  }
  return log;
}

template <class Real>
FinetuneResult Trainer<Real>::finetune(const EpochCallback& cb) {
  FinetuneResult res;
  auto best = m2se::cast_model<Real, Real>(model_);
  std::size_t stale = 0;
  while (epoch_ < cfg_.finetune_epochs) {
    double loss = 0;
    try {
      loss = cfg_.variants.e2e ? run_epoch(ft_inst_, [&](const auto& b) { return e2e_step(b); })
                               : finetune_epoch();
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (fine-tuning epoch " + std::to_string(epoch_ + 1) + ")");
    }
    ++epoch_;
    EpochRecord rec{epoch_, loss, std::nullopt, std::nullopt};
    const double val = evaluate(data::EvalMode::kValid).rows.front().recall[2];
    rec.val_r20 = val;
    if (cfg_.diagnostic) {
      rec.train_loss = eval_loss(ft_inst_);
      rec.test_loss = eval_loss(test_inst_);
    }
    res.log.append(rec);
    if (cb) cb("finetune", rec);
    if (val > best_metric_) {
      best_metric_ = val;
      res.best_epoch = epoch_;
      res.best_val = val;
      m2se::copy_parameters(model_, best);
      stale = 0;
    } else if (++stale >= cfg_.patience && cfg_.early_stop) {
      break;
    }
  }
  res.epochs_run = epoch_;
  if (cfg_.early_stop) {
    if (res.best_epoch > 0) m2se::copy_parameters(best, model_);
  } else if (!res.log.epochs.empty()) {
    res.best_epoch = epoch_;
    res.best_val = *res.log.epochs.back().val_r20;
  }
  return res;
}

template <class Real>
double Trainer<Real>::eval_loss(const std::vector<TrainingInstance>& instances) const {
  if (instances.empty()) throw EmptyDatasetError("eval_loss: no instances");
  nk::Graph<Real> g(false);
  Rng unused(0);
  const auto catalog = m2se::make_catalog_table(g, model_, bank_, unused, false);
  m2se::ForwardOptions opt;
  opt.stage = data::Stage::kFinetune;
  opt.training = false;
  opt.use_id = use_id();
  double total = 0;
  for (std::size_t s = 0; s < instances.size(); s += cfg_.eval_batch_size) {
    std::vector<const TrainingInstance*> ptr;
    for (std::size_t k = s; k < std::min(instances.size(), s + cfg_.eval_batch_size); ++k)
      ptr.push_back(&instances[k]);
    const auto b = assemble(ptr);
    const auto acts = m2se::m2se_forward(g, model_, catalog, b, opt, unused);
    const auto logits = obj::finetune_logits(g, acts.text.h, acts.image.h, catalog,
                                             use_id() ? model_.id_table : T<Real>());
    total += obj::finetune_loss(g, logits, b.targets).item();
  }
  return total / static_cast<double>(instances.size());
}

template <class Real>
eval::MetricsReport Trainer<Real>::evaluate(data::EvalMode mode, bool groups) const {
  eval::EvalOptions opt;
  opt.mode = mode;
  opt.groups = groups;
  opt.use_id = use_id();
  opt.batch_size = cfg_.eval_batch_size;
  return eval::evaluate(model_, bank_, split_, opt);
}

template <class Real>
m2se::Checkpoint Trainer<Real>::checkpoint(const std::string& config_json) const {
  m2se::Checkpoint ck;
  ck.config_json = config_json;
  ck.epoch = epoch_;
  ck.best_metric = best_metric_;
  ck.rng_states = {rng_.state()};
  ck.params = m2se::export_tensors(model_);
  const auto params = model_.parameters();
  ck.adam_step = adam_.step;
  ck.adam_m = export_moments(params, adam_.m);
  ck.adam_v = export_moments(params, adam_.v);
  return ck;
}

template <class Real>
void Trainer<Real>::restore(const m2se::Checkpoint& ck) {
  m2se::import_tensors(model_, ck.params);
  const auto params = model_.parameters();
  adam_.step = ck.adam_step;
  adam_.m = import_moments(params, ck.adam_m);
  adam_.v = import_moments(params, ck.adam_v);
  if (ck.rng_states.empty()) throw ContractError("checkpoint has no rng state");
  rng_.set_state(ck.rng_states.front());
  epoch_ = ck.epoch;
  best_metric_ = ck.best_metric;
}

template <class Real>
void Trainer<Real>::load_parameters(const m2se::Checkpoint& ck) {
  m2se::import_tensors(model_, ck.params);
}

template <class Real>
VariantResult run_variant(const TrainConfig& cfg, const data::SplitBundle& split,
                          const data::FeatureBank& bank, const std::string& label,
                          const m2se::Checkpoint* init, const EpochCallback& cb) {
  cfg.validate();
  VariantResult r;
  r.label = label;
  r.variants = cfg.variants;
  Trainer<Real> tr(cfg, split, bank);
  if (init) {
    tr.load_parameters(*init);
  } else if (!cfg.variants.no_pretrain && !cfg.variants.e2e) {
    r.pretrain_log = tr.pretrain(cb);
  }
  tr.start_stage();
  r.finetune = tr.finetune(cb);
  if (cfg.variants.cold_start) {
    eval::EvalOptions opt;
    opt.cold = true;
    opt.batch_size = cfg.eval_batch_size;
    r.test = eval::evaluate(tr.model(), bank, split, opt);
  } else {
    r.test = tr.evaluate(data::EvalMode::kTest, true);
  }
  return r;
}

std::vector<std::pair<std::string, Variants>> ablation_variants() {
  std::vector<std::pair<std::string, Variants>> out = {{"full", {}}};
  for (const char* name :
       {"no-nip", "no-cmcl", "no-cmixup", "no-pretrain", "no-proj", "e2e", "shared-encoders"}) {
    Variants v;
    v.set(name);
    out.emplace_back(name, v);
  }
  return out;
}

template <class Real>
std::vector<VariantResult> run_ablation(const TrainConfig& cfg, const data::SplitBundle& split,
                                        const data::FeatureBank& bank, const EpochCallback& cb) {
  std::vector<VariantResult> rows;
  for (const auto& [label, flags] : ablation_variants()) {
    TrainConfig c = cfg;
    for (const auto& name : flags.names()) c.variants.set(name);
    rows.push_back(run_variant<Real>(c, split, bank, label, nullptr, cb));
  }
  return rows;
}

std::string format_comparison(const std::vector<VariantResult>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(18) << "variant" << std::right << std::setw(6) << "best";
  for (auto k : eval::kCutoffs) s << std::setw(9) << ("R@" + std::to_string(k));
  for (auto k : eval::kCutoffs) s << std::setw(9) << ("N@" + std::to_string(k));
  s << '\n' << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    const auto& m = r.test.rows.front();
    s << std::left << std::setw(18) << r.label << std::right << std::setw(6) << r.finetune.best_epoch;
    for (double v : m.recall) s << std::setw(9) << v;
    for (double v : m.ndcg) s << std::setw(9) << v;
    s << '\n';
  }
  return s.str();
}

void write_comparison_csv(const std::vector<VariantResult>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::setprecision(17) << "variant,best_epoch,R@5,R@10,R@20,N@5,N@10,N@20\n";
  for (const auto& r : rows) {
    const auto& m = r.test.rows.front();
    out << r.label << ',' << r.finetune.best_epoch;
    for (double v : m.recall) out << ',' << v;
    for (double v : m.ndcg) out << ',' << v;
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<GridPoint> default_grid() {
  std::vector<GridPoint> grid;
  for (double lr : {0.0001, 0.0005, 0.001})
    for (std::size_t bs : {256, 512, 1024})
      for (double wd : {0.0001, 0.0005, 0.001}) grid.push_back({lr, bs, wd});
  return grid;
}

template <class Real>
std::vector<GridPoint> grid_search(const TrainConfig& cfg, const data::SplitBundle& split,
                                   const data::FeatureBank& bank, std::vector<GridPoint> grid) {
  for (auto& p : grid) {
    TrainConfig c = cfg;
    c.learning_rate = p.learning_rate;
    c.batch_size = p.batch_size;
    c.weight_decay = p.weight_decay;
    p.best_val = run_variant<Real>(c, split, bank, "grid").finetune.best_val;
  }
  std::stable_sort(grid.begin(), grid.end(),
                   [](const GridPoint& a, const GridPoint& b) { return a.best_val > b.best_val; });
  return grid;
}

template class Trainer<float>;
template class Trainer<double>;
template VariantResult run_variant<float>(const TrainConfig&, const data::SplitBundle&,
                                          const data::FeatureBank&, const std::string&,
                                          const m2se::Checkpoint*, const EpochCallback&);
template VariantResult run_variant<double>(const TrainConfig&, const data::SplitBundle&,
                                           const data::FeatureBank&, const std::string&,
                                           const m2se::Checkpoint*, const EpochCallback&);
template std::vector<VariantResult> run_ablation<float>(const TrainConfig&, const data::SplitBundle&,
                                                        const data::FeatureBank&, const EpochCallback&);
template std::vector<VariantResult> run_ablation<double>(const TrainConfig&, const data::SplitBundle&,
                                                         const data::FeatureBank&, const EpochCallback&);
template std::vector<GridPoint> grid_search<float>(const TrainConfig&, const data::SplitBundle&,
                                                   const data::FeatureBank&, std::vector<GridPoint>);
template std::vector<GridPoint> grid_search<double>(const TrainConfig&, const data::SplitBundle&,
                                                    const data::FeatureBank&, std::vector<GridPoint>);

}  // namespace mp4sr::train
