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

// mp4sr command-line tool. Links only the C API.
//
// Exit codes: 0 success, 1 runtime or data error, 2 configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mp4sr.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

// Thrown to unwind with an exit code after a failed API call.
struct Failure {
  int code;
};

void check(mp4sr_status s, const std::string& what) {
  if (s == MP4SR_OK) return;
  std::fprintf(stderr, "mp4sr: %s: %s\n", what.c_str(), mp4sr_last_error());
  throw Failure{s == MP4SR_ERR_CONFIG ? kExitConfig : kExitRuntime};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<mp4sr_config, Deleter<mp4sr_config, mp4sr_config_free>>;
using Data = std::unique_ptr<mp4sr_data, Deleter<mp4sr_data, mp4sr_data_free>>;
using Trainer = std::unique_ptr<mp4sr_trainer, Deleter<mp4sr_trainer, mp4sr_trainer_free>>;
using Report = std::unique_ptr<mp4sr_report, Deleter<mp4sr_report, mp4sr_report_free>>;
using Ablation = std::unique_ptr<mp4sr_ablation, Deleter<mp4sr_ablation, mp4sr_ablation_free>>;

std::string take(char* s) {
  std::string out = s ? s : "";
  mp4sr_string_free(s);
  return out;
}

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string init;
  std::vector<std::string> variants;
  bool cold_start = false;
  std::size_t k = 5;
  std::vector<std::string> positional;
  bool quiet = false;
};

// Config file (or defaults) with command-line overrides applied, validated.
Config load_config(const Options& o) {
  mp4sr_config* raw = nullptr;
  if (o.config.empty()) check(mp4sr_config_new(&raw), "config");
  else check(mp4sr_config_from_file(o.config.c_str(), &raw), "config");
  Config cfg(raw);
  if (o.seed_set) check(mp4sr_config_set_seed(cfg.get(), o.seed), "--seed");
  if (!o.out.empty()) check(mp4sr_config_set_output_dir(cfg.get(), o.out.c_str()), "--out");
  for (const auto& v : o.variants) check(mp4sr_config_add_variant(cfg.get(), v.c_str()), "--variant");
  if (o.cold_start) check(mp4sr_config_add_variant(cfg.get(), "cold-start"), "--cold-start");
  check(mp4sr_config_validate(cfg.get()), "config");
  return cfg;
}

fs::path output_dir(const mp4sr_config* cfg) {
  char* s = nullptr;
  check(mp4sr_config_output_dir(cfg, &s), "config");
  return fs::path(take(s));
}

// Creates the fixed layout and writes the config echo.
fs::path prepare_output(const mp4sr_config* cfg) {
  const fs::path out = output_dir(cfg);
  std::error_code ec;
  for (const char* sub : {"checkpoints", "logs", "reports"}) {
    fs::create_directories(out / sub, ec);
    if (ec) {
      std::fprintf(stderr, "mp4sr: cannot create '%s': %s\n", (out / sub).c_str(), ec.message().c_str());
      throw Failure{kExitRuntime};
    }
  }
  char* json = nullptr;
  check(mp4sr_config_to_json(cfg, &json), "config");
  std::ofstream(out / "config.json", std::ios::binary | std::ios::trunc) << take(json);
  return out;
}

void on_epoch(void* user, const char* stage, const mp4sr_epoch_record* r) {
  if (*static_cast<const bool*>(user)) return;
  std::fprintf(stderr, "[%s] epoch %zu loss %.6f", stage, r->epoch, r->train_loss);
  if (r->has_val_r20) std::fprintf(stderr, " val_R@20 %.4f", r->val_r20);
  if (r->has_test_loss) std::fprintf(stderr, " test_loss %.6f", r->test_loss);
  std::fprintf(stderr, "\n");
}

Data load_data(const mp4sr_config* cfg) {
  mp4sr_data* raw = nullptr;
  check(mp4sr_data_load(cfg, &raw), "data");
  Data d(raw);
  mp4sr_data_info info{};
  check(mp4sr_data_info_get(d.get(), &info), "data");
  std::fprintf(stderr, "data: %zu users, %zu items, %zu interactions, feature dim %zu\n", info.users,
               info.items, info.interactions, info.feature_dim);
  return d;
}

Trainer make_trainer(const mp4sr_config* cfg, const mp4sr_data* d, const Options& o) {
  mp4sr_trainer* raw = nullptr;
  check(mp4sr_trainer_new(cfg, d, &raw), "trainer");
  Trainer t(raw);
  check(mp4sr_trainer_set_callback(t.get(), on_epoch, const_cast<bool*>(&o.quiet)), "trainer");
  if (mp4sr_trainer_is_double(t.get())) std::fprintf(stderr, "verification mode: 64-bit arithmetic\n");
  return t;
}

void write_report(const mp4sr_trainer* t, mp4sr_eval_mode mode, unsigned flags, const fs::path& path,
                  bool print) {
  mp4sr_report* raw = nullptr;
  check(mp4sr_trainer_evaluate(t, mode, flags, &raw), "evaluate");
  Report r(raw);
  check(mp4sr_report_write_csv(r.get(), path.c_str()), "report");
  if (mp4sr_report_empty(r.get())) std::fprintf(stderr, "note: %s has no users\n", path.c_str());
  if (print) {
    char* table = nullptr;
    check(mp4sr_report_format(r.get(), &table), "report");
    std::printf("%s", take(table).c_str());
  }
}

bool has_variant(const Options& o, const std::string& name) {
  if (name == "cold-start" && o.cold_start) return true;
  for (const auto& v : o.variants)
    if (v == name) return true;
  return false;
}

// Test and validation reports; cold-start runs add the cold-target report.
void write_reports(const mp4sr_trainer* t, const fs::path& out, const Options& o, const std::string& prefix) {
  write_report(t, MP4SR_EVAL_VALID, 0, out / "reports" / (prefix + "valid_metrics.csv"), false);
  write_report(t, MP4SR_EVAL_TEST, MP4SR_EVAL_GROUPS, out / "reports" / (prefix + "test_metrics.csv"), true);
  if (has_variant(o, "cold-start"))
    write_report(t, MP4SR_EVAL_TEST, MP4SR_EVAL_COLD, out / "reports" / (prefix + "cold_metrics.csv"), true);
}

int cmd_synth(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = prepare_output(cfg.get());
  fs::create_directories(out / "data");
  const auto inter = out / "data" / "interactions.tsv";
  const auto feat = out / "data" / "features.bin";
  check(mp4sr_synth_write(cfg.get(), inter.c_str(), feat.c_str()), "synth");
  std::printf("wrote %s\nwrote %s\n", inter.c_str(), feat.c_str());
  return kExitOk;
}

int cmd_preprocess(const Options& o) {
  const auto cfg = load_config(o);
  std::string input;
  if (!o.positional.empty()) {
    input = o.positional.front();
  } else {
    char* path = nullptr;
    check(mp4sr_config_interactions(cfg.get(), &path), "config");
    input = take(path);
  }
  if (input.empty()) {
    std::fprintf(stderr, "mp4sr: preprocess needs an interactions file (argument or config key)\n");
    return kExitConfig;
  }
  const auto out = prepare_output(cfg.get());
  fs::create_directories(out / "data");
  const auto filtered = out / "data" / "interactions.tsv";
  const auto manifest = out / "data" / "manifest.json";
  check(mp4sr_preprocess(input.c_str(), o.k, filtered.c_str(), manifest.c_str()), "preprocess");
  std::printf("wrote %s\nwrote %s\n", filtered.c_str(), manifest.c_str());
  return kExitOk;
}

int cmd_pretrain(const Options& o) {
  const auto cfg = load_config(o);
  if (has_variant(o, "no-pretrain")) {
    std::fprintf(stderr, "mp4sr: variant no-pretrain skips pre-training; nothing to do\n");
    return kExitConfig;
  }
  const auto out = prepare_output(cfg.get());
  const auto d = load_data(cfg.get());
  auto t = make_trainer(cfg.get(), d.get(), o);
  if (!o.init.empty()) check(mp4sr_trainer_restore(t.get(), o.init.c_str()), "--init");
  check(mp4sr_trainer_pretrain(t.get()), "pretrain");
  check(mp4sr_trainer_write_log(t.get(), "pretrain", (out / "logs" / "pretrain_log.csv").c_str()), "log");
  const auto ck = out / "checkpoints" / "pretrain.ckpt";
  check(mp4sr_trainer_save(t.get(), ck.c_str()), "checkpoint");
  std::printf("wrote %s\n", ck.c_str());
  return kExitOk;
}

int cmd_finetune(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = prepare_output(cfg.get());
  const auto d = load_data(cfg.get());
  auto t = make_trainer(cfg.get(), d.get(), o);
  if (!o.init.empty()) check(mp4sr_trainer_load_parameters(t.get(), o.init.c_str()), "--init");
  mp4sr_finetune_summary s{};
  check(mp4sr_trainer_finetune(t.get(), &s), "finetune");
  check(mp4sr_trainer_write_log(t.get(), "finetune", (out / "logs" / "finetune_log.csv").c_str()), "log");
  const auto ck = out / "checkpoints" / "finetune.ckpt";
  check(mp4sr_trainer_save(t.get(), ck.c_str()), "checkpoint");
  std::printf("best epoch %zu (val R@20 %.4f) after %zu epochs\n", s.best_epoch, s.best_val_r20, s.epochs_run);
  write_reports(t.get(), out, o, "");
  std::printf("wrote %s\n", ck.c_str());
  return kExitOk;
}

int cmd_evaluate(const Options& o) {
  if (o.init.empty()) {
    std::fprintf(stderr, "mp4sr: evaluate needs --init CHECKPOINT\n");
    return kExitConfig;
  }
  const auto cfg = load_config(o);
  const auto out = prepare_output(cfg.get());
  const auto d = load_data(cfg.get());
  auto t = make_trainer(cfg.get(), d.get(), o);
  check(mp4sr_trainer_load_parameters(t.get(), o.init.c_str()), "--init");
  write_reports(t.get(), out, o, "eval_");
  return kExitOk;
}

int cmd_ablate(const Options& o) {
  const auto cfg = load_config(o);
  const auto out = prepare_output(cfg.get());
  const auto d = load_data(cfg.get());
  mp4sr_ablation* raw = nullptr;
  check(mp4sr_ablate(cfg.get(), d.get(), on_epoch, const_cast<bool*>(&o.quiet), &raw), "ablate");
  Ablation a(raw);
  const auto csv = out / "reports" / "ablation.csv";
  check(mp4sr_ablation_write_csv(a.get(), csv.c_str()), "ablate");
  char* table = nullptr;
  check(mp4sr_ablation_format(a.get(), &table), "ablate");
  std::printf("%s", take(table).c_str());
  std::printf("wrote %s\n", csv.c_str());
  return kExitOk;
}

int cmd_report(const Options& o) {
  if (o.positional.empty()) {
    std::fprintf(stderr, "mp4sr: report needs RUN_ID=TRAIN_LOG.csv arguments\n");
    return kExitConfig;
  }
  std::vector<std::string> ids, paths;
  for (const auto& arg : o.positional) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
      std::fprintf(stderr, "mp4sr: expected RUN_ID=PATH, got '%s'\n", arg.c_str());
      return kExitConfig;
    }
    ids.push_back(arg.substr(0, eq));
    paths.push_back(arg.substr(eq + 1));
  }
  const auto cfg = load_config(o);
  const auto out = prepare_output(cfg.get());
  std::vector<const char*> id_ptr, path_ptr;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    id_ptr.push_back(ids[k].c_str());
    path_ptr.push_back(paths[k].c_str());
  }
  const auto csv = out / "reports" / "loss_trajectory.csv";
  check(mp4sr_export_trajectory(id_ptr.data(), path_ptr.data(), ids.size(), csv.c_str()), "report");
  std::printf("wrote %s\n", csv.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MP4SR: multimodal pre-training for sequential recommendation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Seed for all randomness")->each([&](const std::string&) { o.seed_set = true; });
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--variant", o.variants, "Variant flag (repeatable)")->take_all();
    sub->add_flag("--cold-start", o.cold_start, "Cold-start protocol");
    sub->add_flag("--quiet", o.quiet, "No per-epoch progress");
  };

  auto* synth = app.add_subcommand("synth", "Write a planted-signal synthetic dataset");
  auto* pre = app.add_subcommand("preprocess", "k-core filter an interactions file and write a split manifest");
  auto* pt = app.add_subcommand("pretrain", "Pre-train and save a checkpoint");
  auto* ft = app.add_subcommand("finetune", "Fine-tune (from --init or fresh) and report metrics");
  auto* ev = app.add_subcommand("evaluate", "Evaluate a saved checkpoint");
  auto* ab = app.add_subcommand("ablate", "Run the variant table");
  auto* rp = app.add_subcommand("report", "Combine train logs into a loss-trajectory CSV");
  for (auto* sub : {synth, pre, pt, ft, ev, ab, rp}) common(sub);
  pre->add_option("--k", o.k, "k-core threshold (0 disables)");
  pre->add_option("interactions", o.positional, "Interactions TSV (default: config key)");
  pt->add_option("--init", o.init, "Resume from a checkpoint");
  ft->add_option("--init", o.init, "Pre-trained checkpoint");
  ev->add_option("--init", o.init, "Checkpoint to evaluate");
  rp->add_option("runs", o.positional, "RUN_ID=TRAIN_LOG.csv pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*pre) return cmd_preprocess(o);
    if (*pt) return cmd_pretrain(o);
    if (*ft) return cmd_finetune(o);
    if (*ev) return cmd_evaluate(o);
    if (*ab) return cmd_ablate(o);
    if (*rp) return cmd_report(o);
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mp4sr: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
