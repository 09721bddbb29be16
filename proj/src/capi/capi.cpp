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

#include "mp4sr.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "common/binio.hpp"
#include "common/errors.hpp"
#include "common/train_log.hpp"
#include "dataio/dataset.hpp"
#include "dataio/feature_store.hpp"
#include "dataio/manifest.hpp"
#include "dataio/split.hpp"
#include "dataio/synth.hpp"
#include "evaluator/metrics.hpp"
#include "m2se/checkpoint.hpp"
#include "trainer/config.hpp"
#include "trainer/trainer.hpp"

using namespace mp4sr;

struct mp4sr_config {
  train::RunConfig run;
};

namespace {

struct DataBundle {
  data::InteractionDataset dataset;
  data::SplitBundle split;
  data::FeatureBank bank;
};

template <class Real>
using TrainerPtr = std::unique_ptr<train::Trainer<Real>>;

}  // namespace

struct mp4sr_data {
  std::shared_ptr<const DataBundle> bundle;
};

struct mp4sr_trainer {
  std::shared_ptr<const DataBundle> bundle;
  std::string config_json;
  std::variant<TrainerPtr<float>, TrainerPtr<double>> impl;
  mp4sr_epoch_callback cb = nullptr;
  void* user = nullptr;
  TrainLog pretrain_log, finetune_log;
};

struct mp4sr_report {
  eval::MetricsReport report;
};

struct mp4sr_ablation {
  std::vector<train::VariantResult> rows;
};

namespace {

thread_local std::string g_last_error;

mp4sr_status fail(mp4sr_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs fn, mapping core exceptions onto status codes.
template <class Fn>
mp4sr_status guard(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return MP4SR_OK;
  } catch (const ConfigError& e) {
    return fail(MP4SR_ERR_CONFIG, e.what());
  } catch (const IoError& e) {
    return fail(MP4SR_ERR_IO, e.what());
  } catch (const ParseError& e) {
    return fail(MP4SR_ERR_FORMAT, e.what());
  } catch (const FormatError& e) {
    return fail(MP4SR_ERR_FORMAT, e.what());
  } catch (const DataError& e) {
    return fail(MP4SR_ERR_DATA, e.what());
  } catch (const EmptyDatasetError& e) {
    return fail(MP4SR_ERR_DATA, e.what());
  } catch (const NumericError& e) {
    return fail(MP4SR_ERR_NUMERIC, e.what());
  } catch (const ContractError& e) {
    return fail(MP4SR_ERR_CONTRACT, e.what());
  } catch (const DimensionError& e) {
    return fail(MP4SR_ERR_CONTRACT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(MP4SR_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(MP4SR_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(MP4SR_ERR_INTERNAL, "unknown failure");
  }
}

void require(const void* p, const char* what) {
  if (!p) throw ContractError(std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

mp4sr_epoch_record to_c(const EpochRecord& r) {
  mp4sr_epoch_record c{};
  c.epoch = r.epoch;
  c.train_loss = r.train_loss;
  c.has_val_r20 = r.val_r20.has_value();
  c.val_r20 = r.val_r20.value_or(0.0);
  c.has_test_loss = r.test_loss.has_value();
  c.test_loss = r.test_loss.value_or(0.0);
  return c;
}

mp4sr_metric_row to_c(const eval::MetricRow& r) {
  mp4sr_metric_row c{};
  c.label = r.label.c_str();
  c.users = r.users;
  for (std::size_t k = 0; k < 3; ++k) {
    c.recall[k] = r.recall[k];
    c.ndcg[k] = r.ndcg[k];
  }
  return c;
}

train::EpochCallback bridge(mp4sr_epoch_callback cb, void* user) {
  if (!cb) return {};
  return [cb, user](const char* stage, const EpochRecord& r) {
    const auto c = to_c(r);
    cb(user, stage, &c);
  };
}

bool verify_env() {
  const char* v = std::getenv("MP4SR_VERIFY");
  return v && std::string(v) == "1";
}

data::SynthParams synth_params(const train::RunConfig& cfg) {
  data::SynthParams p = cfg.synth;
  p.seed = cfg.train.seed;
  return p;
}

}  // namespace

extern "C" {

const char* mp4sr_version(void) { return "1.0.0"; }
const char* mp4sr_last_error(void) { return g_last_error.c_str(); }
void mp4sr_string_free(char* s) { std::free(s); }
int mp4sr_verify_mode(void) { return verify_env() ? 1 : 0; }

mp4sr_status mp4sr_config_new(mp4sr_config** out) {
  return guard([&] {
    require(out, "out");
    *out = new mp4sr_config{};
  });
}

mp4sr_status mp4sr_config_from_json(const char* json_text, mp4sr_config** out) {
  return guard([&] {
    require(json_text, "json_text");
    require(out, "out");
    *out = new mp4sr_config{train::parse_run_config(json_text)};
  });
}

mp4sr_status mp4sr_config_from_file(const char* path, mp4sr_config** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    const auto text = read_file(path);
    try {
      *out = new mp4sr_config{train::parse_run_config(text)};
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(path) + ": " + e.what());
    }
  });
}

mp4sr_status mp4sr_config_set_seed(mp4sr_config* cfg, uint64_t seed) {
  return guard([&] {
    require(cfg, "cfg");
    cfg->run.train.seed = seed;
  });
}

mp4sr_status mp4sr_config_set_output_dir(mp4sr_config* cfg, const char* dir) {
  return guard([&] {
    require(cfg, "cfg");
    require(dir, "dir");
    cfg->run.output_dir = dir;
  });
}

mp4sr_status mp4sr_config_set_kcore(mp4sr_config* cfg, size_t k) {
  return guard([&] {
    require(cfg, "cfg");
    cfg->run.kcore = k;
  });
}

mp4sr_status mp4sr_config_set_interactions(mp4sr_config* cfg, const char* path) {
  return guard([&] {
    require(cfg, "cfg");
    require(path, "path");
    cfg->run.interactions = path;
  });
}

mp4sr_status mp4sr_config_add_variant(mp4sr_config* cfg, const char* name) {
  return guard([&] {
    require(cfg, "cfg");
    require(name, "name");
    cfg->run.train.variants.set(name);
  });
}

mp4sr_status mp4sr_config_validate(const mp4sr_config* cfg) {
  return guard([&] {
    require(cfg, "cfg");
    cfg->run.train.validate();
  });
}

mp4sr_status mp4sr_config_to_json(const mp4sr_config* cfg, char** out) {
  return guard([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = dup_string(train::run_config_json(cfg->run));
  });
}

mp4sr_status mp4sr_config_output_dir(const mp4sr_config* cfg, char** out) {
  return guard([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = dup_string(cfg->run.output_dir);
  });
}

mp4sr_status mp4sr_config_interactions(const mp4sr_config* cfg, char** out) {
  return guard([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = dup_string(cfg->run.interactions);
  });
}

void mp4sr_config_free(mp4sr_config* cfg) { delete cfg; }

mp4sr_status mp4sr_synth_write(const mp4sr_config* cfg, const char* interactions_path,
                               const char* features_path) {
  return guard([&] {
    require(cfg, "cfg");
    require(interactions_path, "interactions_path");
    require(features_path, "features_path");
    const auto syn = data::synth_generate(synth_params(cfg->run));
    data::write_interactions(syn.dataset, interactions_path);
    data::write_feature_store(syn.features, features_path);
  });
}

mp4sr_status mp4sr_preprocess(const char* interactions_path, size_t k, const char* out_interactions,
                              const char* out_manifest) {
  return guard([&] {
    require(interactions_path, "interactions_path");
    require(out_interactions, "out_interactions");
    require(out_manifest, "out_manifest");
    const auto raw = data::load_interactions(interactions_path);
    const auto ds = k > 0 ? data::kcore_filter(raw, k) : raw;
    const auto split = data::leave_one_out_split(ds);
    data::write_interactions(ds, out_interactions);
    const auto manifest = data::split_manifest_json(ds, split, k);
    write_file(out_manifest, manifest);
  });
}

mp4sr_status mp4sr_data_load(const mp4sr_config* cfg, mp4sr_data** out) {
  return guard([&] {
    require(cfg, "cfg");
    require(out, "out");
    const auto& run = cfg->run;
    auto b = std::make_shared<DataBundle>();
    if (run.interactions.empty() && run.features.empty()) {
      auto syn = data::synth_generate(synth_params(run));
      b->dataset = std::move(syn.dataset);
      b->bank = data::FeatureBank(b->dataset, syn.features);
    } else {
      if (run.interactions.empty() || run.features.empty())
        throw ConfigError("config needs both 'interactions' and 'features' (or neither, for synthetic data)");
      const auto raw = data::load_interactions(run.interactions);
      b->dataset = run.kcore > 0 ? data::kcore_filter(raw, run.kcore) : raw;
      b->bank = data::FeatureBank(b->dataset, data::load_feature_store(run.features));
    }
    b->split = data::leave_one_out_split(b->dataset);
    if (b->split.users.empty()) throw EmptyDatasetError("no user has the three interactions a split needs");
    *out = new mp4sr_data{std::move(b)};
  });
}

mp4sr_status mp4sr_data_info_get(const mp4sr_data* d, mp4sr_data_info* out) {
  return guard([&] {
    require(d, "data");
    require(out, "out");
    const auto& b = *d->bundle;
    out->users = b.dataset.num_users();
    out->items = b.dataset.num_items();
    out->interactions = b.dataset.num_interactions();
    out->split_users = b.split.users.size();
    out->excluded_users = b.split.excluded_users;
    out->feature_dim = b.bank.dim();
  });
}

void mp4sr_data_free(mp4sr_data* d) { delete d; }

mp4sr_status mp4sr_trainer_new(const mp4sr_config* cfg, const mp4sr_data* d, mp4sr_trainer** out) {
  return guard([&] {
    require(cfg, "cfg");
    require(d, "data");
    require(out, "out");
    auto t = std::make_unique<mp4sr_trainer>();
    t->bundle = d->bundle;
    t->config_json = train::run_config_json(cfg->run);
    const auto& b = *t->bundle;
    if (verify_env()) {
      t->impl = std::make_unique<train::Trainer<double>>(cfg->run.train, b.split, b.bank);
    } else {
      t->impl = std::make_unique<train::Trainer<float>>(cfg->run.train, b.split, b.bank);
    }
    *out = t.release();
  });
}

mp4sr_status mp4sr_trainer_set_callback(mp4sr_trainer* t, mp4sr_epoch_callback cb, void* user) {
  return guard([&] {
    require(t, "trainer");
    t->cb = cb;
    t->user = user;
  });
}

int mp4sr_trainer_is_double(const mp4sr_trainer* t) {
  return t && std::holds_alternative<TrainerPtr<double>>(t->impl) ? 1 : 0;
}

mp4sr_status mp4sr_trainer_pretrain(mp4sr_trainer* t) {
  return guard([&] {
    require(t, "trainer");
    std::visit([&](auto& tr) { t->pretrain_log = tr->pretrain(bridge(t->cb, t->user)); }, t->impl);
  });
}

mp4sr_status mp4sr_trainer_start_stage(mp4sr_trainer* t) {
  return guard([&] {
    require(t, "trainer");
    std::visit([](auto& tr) { tr->start_stage(); }, t->impl);
  });
}

mp4sr_status mp4sr_trainer_finetune(mp4sr_trainer* t, mp4sr_finetune_summary* out) {
  return guard([&] {
    require(t, "trainer");
    std::visit(
        [&](auto& tr) {
          const auto res = tr->finetune(bridge(t->cb, t->user));
          t->finetune_log = res.log;
          if (out) {
            out->best_epoch = res.best_epoch;
            out->best_val_r20 = res.best_val;
            out->epochs_run = res.epochs_run;
          }
        },
        t->impl);
  });
}

mp4sr_status mp4sr_trainer_pretrain_epoch(mp4sr_trainer* t, double* mean_loss) {
  return guard([&] {
    require(t, "trainer");
    const double l = std::visit([](auto& tr) { return tr->pretrain_epoch(); }, t->impl);
    if (mean_loss) *mean_loss = l;
  });
}

mp4sr_status mp4sr_trainer_finetune_epoch(mp4sr_trainer* t, double* mean_loss) {
  return guard([&] {
    require(t, "trainer");
    const double l = std::visit([](auto& tr) { return tr->finetune_epoch(); }, t->impl);
    if (mean_loss) *mean_loss = l;
  });
}

mp4sr_status mp4sr_trainer_epoch(const mp4sr_trainer* t, size_t* epoch) {
  return guard([&] {
    require(t, "trainer");
    require(epoch, "epoch");
    *epoch = std::visit([](const auto& tr) { return tr->epoch(); }, t->impl);
  });
}

mp4sr_status mp4sr_trainer_write_log(const mp4sr_trainer* t, const char* stage, const char* path) {
  return guard([&] {
    require(t, "trainer");
    require(stage, "stage");
    require(path, "path");
    const std::string s = stage;
    if (s == "pretrain") write_train_log_csv(t->pretrain_log, path);
    else if (s == "finetune") write_train_log_csv(t->finetune_log, path);
    else throw ContractError("stage must be \"pretrain\" or \"finetune\"");
  });
}

mp4sr_status mp4sr_trainer_save(const mp4sr_trainer* t, const char* path) {
  return guard([&] {
    require(t, "trainer");
    require(path, "path");
    std::visit([&](const auto& tr) { m2se::save_checkpoint(tr->checkpoint(t->config_json), path); },
               t->impl);
  });
}

mp4sr_status mp4sr_trainer_restore(mp4sr_trainer* t, const char* path) {
  return guard([&] {
    require(t, "trainer");
    require(path, "path");
    const auto ck = m2se::load_checkpoint(path);
    std::visit([&](auto& tr) { tr->restore(ck); }, t->impl);
  });
}

mp4sr_status mp4sr_trainer_load_parameters(mp4sr_trainer* t, const char* path) {
  return guard([&] {
    require(t, "trainer");
    require(path, "path");
    const auto ck = m2se::load_checkpoint(path);
    std::visit([&](auto& tr) { tr->load_parameters(ck); }, t->impl);
  });
}

mp4sr_status mp4sr_trainer_evaluate(const mp4sr_trainer* t, mp4sr_eval_mode mode, unsigned flags,
                                    mp4sr_report** out) {
  return guard([&] {
    require(t, "trainer");
    require(out, "out");
    if (mode != MP4SR_EVAL_VALID && mode != MP4SR_EVAL_TEST) throw ContractError("unknown evaluation mode");
    const auto m = mode == MP4SR_EVAL_VALID ? data::EvalMode::kValid : data::EvalMode::kTest;
    auto rep = std::make_unique<mp4sr_report>();
    std::visit(
        [&](const auto& tr) {
          eval::EvalOptions opt;
          opt.mode = m;
          opt.groups = (flags & MP4SR_EVAL_GROUPS) != 0;
          opt.cold = (flags & MP4SR_EVAL_COLD) != 0;
          opt.use_id = !tr->config().variants.cold_start;
          opt.batch_size = tr->config().eval_batch_size;
          rep->report = eval::evaluate(tr->model(), t->bundle->bank, t->bundle->split, opt);
        },
        t->impl);
    *out = rep.release();
  });
}

mp4sr_status mp4sr_trainer_training_recall(const mp4sr_trainer* t, size_t k, double* out) {
  return guard([&] {
    require(t, "trainer");
    require(out, "out");
    if (k < 1) throw ContractError("k must be at least 1");
    std::visit(
        [&](const auto& tr) {
          const auto& inst = tr->finetune_instances();
          const auto ranks = eval::rank_instances(tr->model(), t->bundle->bank,
                                                  std::span<const data::TrainingInstance>(inst),
                                                  !tr->config().variants.cold_start,
                                                  tr->config().eval_batch_size);
          double hits = 0;
          for (auto r : ranks) hits += eval::recall_from_rank(r, k);
          *out = ranks.empty() ? 0.0 : hits / static_cast<double>(ranks.size());
        },
        t->impl);
  });
}

void mp4sr_trainer_free(mp4sr_trainer* t) { delete t; }

size_t mp4sr_report_rows(const mp4sr_report* r) { return r ? r->report.rows.size() : 0; }
int mp4sr_report_empty(const mp4sr_report* r) { return r && r->report.empty ? 1 : 0; }

mp4sr_status mp4sr_report_row(const mp4sr_report* r, size_t index, mp4sr_metric_row* out) {
  return guard([&] {
    require(r, "report");
    require(out, "out");
    if (index >= r->report.rows.size()) throw ContractError("report row index out of range");
    *out = to_c(r->report.rows[index]);
  });
}

mp4sr_status mp4sr_report_write_csv(const mp4sr_report* r, const char* path) {
  return guard([&] {
    require(r, "report");
    require(path, "path");
    eval::write_metrics_csv(r->report, path);
  });
}

mp4sr_status mp4sr_report_format(const mp4sr_report* r, char** out) {
  return guard([&] {
    require(r, "report");
    require(out, "out");
    *out = dup_string(eval::format_metrics_table(r->report));
  });
}

void mp4sr_report_free(mp4sr_report* r) { delete r; }

mp4sr_status mp4sr_ablate(const mp4sr_config* cfg, const mp4sr_data* d, mp4sr_epoch_callback cb,
                          void* user, mp4sr_ablation** out) {
  return guard([&] {
    require(cfg, "cfg");
    require(d, "data");
    require(out, "out");
    cfg->run.train.validate();
    const auto& b = *d->bundle;
    auto a = std::make_unique<mp4sr_ablation>();
    a->rows = verify_env() ? train::run_ablation<double>(cfg->run.train, b.split, b.bank, bridge(cb, user))
                           : train::run_ablation<float>(cfg->run.train, b.split, b.bank, bridge(cb, user));
    *out = a.release();
  });
}

size_t mp4sr_ablation_rows(const mp4sr_ablation* a) { return a ? a->rows.size() : 0; }

mp4sr_status mp4sr_ablation_row(const mp4sr_ablation* a, size_t index, mp4sr_metric_row* out) {
  return guard([&] {
    require(a, "ablation");
    require(out, "out");
    if (index >= a->rows.size()) throw ContractError("ablation row index out of range");
    *out = to_c(a->rows[index].test.rows.front());
    out->label = a->rows[index].label.c_str();
  });
}

mp4sr_status mp4sr_ablation_write_csv(const mp4sr_ablation* a, const char* path) {
  return guard([&] {
    require(a, "ablation");
    require(path, "path");
    train::write_comparison_csv(a->rows, path);
  });
}

mp4sr_status mp4sr_ablation_format(const mp4sr_ablation* a, char** out) {
  return guard([&] {
    require(a, "ablation");
    require(out, "out");
    *out = dup_string(train::format_comparison(a->rows));
  });
}

void mp4sr_ablation_free(mp4sr_ablation* a) { delete a; }

mp4sr_status mp4sr_grid_search(const mp4sr_config* cfg, const mp4sr_data* d, const char* out_csv) {
  return guard([&] {
    require(cfg, "cfg");
    require(d, "data");
    require(out_csv, "out_csv");
    const auto& b = *d->bundle;
    const auto grid = verify_env()
                          ? train::grid_search<double>(cfg->run.train, b.split, b.bank, train::default_grid())
                          : train::grid_search<float>(cfg->run.train, b.split, b.bank, train::default_grid());
    std::ostringstream s;
    s << std::setprecision(17) << "learning_rate,batch_size,weight_decay,best_val_r20\n";
    for (const auto& p : grid)
      s << p.learning_rate << ',' << p.batch_size << ',' << p.weight_decay << ',' << p.best_val << '\n';
    write_file(out_csv, s.str());
  });
}

mp4sr_status mp4sr_export_trajectory(const char* const* run_ids, const char* const* log_paths, size_t n,
                                     const char* out_csv) {
  return guard([&] {
    require(out_csv, "out_csv");
    if (n > 0) {
      require(run_ids, "run_ids");
      require(log_paths, "log_paths");
    }
    std::vector<std::pair<std::string, TrainLog>> runs;
    for (size_t k = 0; k < n; ++k) {
      require(run_ids[k], "run id");
      require(log_paths[k], "log path");
      runs.emplace_back(run_ids[k], read_train_log_csv(log_paths[k]));
    }
    eval::export_loss_trajectory(runs, out_csv);
  });
}

}  // extern "C"
