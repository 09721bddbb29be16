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

/* MP4SR C API: multimodal pre-training and fine-tuning for sequential
 * recommendation behind opaque handles.
 *
 * Every fallible call returns an mp4sr_status; on failure the message is
 * available from mp4sr_last_error() on the calling thread until the next
 * API call on that thread. Handles are not thread-safe; distinct handles may
 * be used from distinct threads. Strings returned through char** must be
 * released with mp4sr_string_free. */

#ifndef MP4SR_H_
#define MP4SR_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MP4SR_API __declspec(dllexport)
#else
#define MP4SR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mp4sr_status {
  MP4SR_OK = 0,
  MP4SR_ERR_CONFIG = 1,   /* invalid configuration or flag combination */
  MP4SR_ERR_IO = 2,       /* file cannot be read or written */
  MP4SR_ERR_FORMAT = 3,   /* malformed file contents */
  MP4SR_ERR_DATA = 4,     /* data violates a precondition (missing features, empty set) */
  MP4SR_ERR_NUMERIC = 5,  /* non-finite loss or gradient */
  MP4SR_ERR_CONTRACT = 6, /* caller broke an API contract */
  MP4SR_ERR_INTERNAL = 7  /* unexpected failure */
} mp4sr_status;

typedef enum mp4sr_eval_mode { MP4SR_EVAL_VALID = 0, MP4SR_EVAL_TEST = 1 } mp4sr_eval_mode;

/* Evaluation flags, combinable with |. */
#define MP4SR_EVAL_GROUPS 1u /* add five train-length groups */
#define MP4SR_EVAL_COLD 2u   /* cold-target users only, scored without IDs */

typedef struct mp4sr_config mp4sr_config;
typedef struct mp4sr_data mp4sr_data;
typedef struct mp4sr_trainer mp4sr_trainer;
typedef struct mp4sr_report mp4sr_report;
typedef struct mp4sr_ablation mp4sr_ablation;

typedef struct mp4sr_epoch_record {
  size_t epoch;
  double train_loss;
  int has_val_r20;
  double val_r20;
  int has_test_loss;
  double test_loss;
} mp4sr_epoch_record;

/* Called after every epoch; stage is "pretrain" or "finetune". */
typedef void (*mp4sr_epoch_callback)(void* user, const char* stage, const mp4sr_epoch_record* rec);

typedef struct mp4sr_metric_row {
  const char* label; /* owned by the report */
  size_t users;
  double recall[3]; /* at K = 5, 10, 20 */
  double ndcg[3];
} mp4sr_metric_row;

typedef struct mp4sr_data_info {
  size_t users;
  size_t items;
  size_t interactions;
  size_t split_users;
  size_t excluded_users;
  size_t feature_dim;
} mp4sr_data_info;

typedef struct mp4sr_finetune_summary {
  size_t best_epoch;
  double best_val_r20;
  size_t epochs_run;
} mp4sr_finetune_summary;

/* ---- library ---- */
MP4SR_API const char* mp4sr_version(void);
MP4SR_API const char* mp4sr_last_error(void);
MP4SR_API void mp4sr_string_free(char* s);
/* 1 when MP4SR_VERIFY=1 selects 64-bit arithmetic for new trainers. */
MP4SR_API int mp4sr_verify_mode(void);

/* ---- configuration ---- */
MP4SR_API mp4sr_status mp4sr_config_new(mp4sr_config** out);
/* Strict JSON: unknown keys and wrong types are MP4SR_ERR_CONFIG. */
MP4SR_API mp4sr_status mp4sr_config_from_json(const char* json_text, mp4sr_config** out);
MP4SR_API mp4sr_status mp4sr_config_from_file(const char* path, mp4sr_config** out);
MP4SR_API mp4sr_status mp4sr_config_set_seed(mp4sr_config* cfg, uint64_t seed);
MP4SR_API mp4sr_status mp4sr_config_set_output_dir(mp4sr_config* cfg, const char* dir);
MP4SR_API mp4sr_status mp4sr_config_set_kcore(mp4sr_config* cfg, size_t k);
MP4SR_API mp4sr_status mp4sr_config_set_interactions(mp4sr_config* cfg, const char* path);
MP4SR_API mp4sr_status mp4sr_config_add_variant(mp4sr_config* cfg, const char* name);
/* Checks value ranges and variant combinations. */
MP4SR_API mp4sr_status mp4sr_config_validate(const mp4sr_config* cfg);
MP4SR_API mp4sr_status mp4sr_config_to_json(const mp4sr_config* cfg, char** out);
MP4SR_API mp4sr_status mp4sr_config_output_dir(const mp4sr_config* cfg, char** out);
/* Configured interactions path; empty when unset. */
MP4SR_API mp4sr_status mp4sr_config_interactions(const mp4sr_config* cfg, char** out);
MP4SR_API void mp4sr_config_free(mp4sr_config* cfg);

/* ---- data ---- */
/* Writes the synthetic interactions TSV and feature store described by the
 * config's synth section and seed. */
MP4SR_API mp4sr_status mp4sr_synth_write(const mp4sr_config* cfg, const char* interactions_path,
                                         const char* features_path);
/* k-core filters the interactions file and writes the filtered TSV plus a
 * JSON split manifest. */
MP4SR_API mp4sr_status mp4sr_preprocess(const char* interactions_path, size_t k,
                                        const char* out_interactions, const char* out_manifest);
/* Loads the configured interactions and feature store, or generates the
 * synthetic dataset in memory when neither path is set. */
MP4SR_API mp4sr_status mp4sr_data_load(const mp4sr_config* cfg, mp4sr_data** out);
MP4SR_API mp4sr_status mp4sr_data_info_get(const mp4sr_data* data, mp4sr_data_info* out);
MP4SR_API void mp4sr_data_free(mp4sr_data* data);

/* ---- training ---- */
/* The trainer keeps its own reference to the data; either may be freed first. */
MP4SR_API mp4sr_status mp4sr_trainer_new(const mp4sr_config* cfg, const mp4sr_data* data,
                                         mp4sr_trainer** out);
MP4SR_API mp4sr_status mp4sr_trainer_set_callback(mp4sr_trainer* t, mp4sr_epoch_callback cb,
                                                  void* user);
/* 1 when the trainer computes in 64-bit. */
MP4SR_API int mp4sr_trainer_is_double(const mp4sr_trainer* t);
/* Runs all configured pre-training epochs. */
MP4SR_API mp4sr_status mp4sr_trainer_pretrain(mp4sr_trainer* t);
/* Resets optimizer moments and the epoch counter. */
MP4SR_API mp4sr_status mp4sr_trainer_start_stage(mp4sr_trainer* t);
/* Fine-tunes with early stopping; the model ends at the reported epoch. */
MP4SR_API mp4sr_status mp4sr_trainer_finetune(mp4sr_trainer* t, mp4sr_finetune_summary* out);
MP4SR_API mp4sr_status mp4sr_trainer_pretrain_epoch(mp4sr_trainer* t, double* mean_loss);
MP4SR_API mp4sr_status mp4sr_trainer_finetune_epoch(mp4sr_trainer* t, double* mean_loss);
MP4SR_API mp4sr_status mp4sr_trainer_epoch(const mp4sr_trainer* t, size_t* epoch);
/* Writes the last pretrain or finetune TrainLog as CSV. */
MP4SR_API mp4sr_status mp4sr_trainer_write_log(const mp4sr_trainer* t, const char* stage,
                                               const char* path);
/* Full state (parameters, optimizer, rng, epoch, best metric). */
MP4SR_API mp4sr_status mp4sr_trainer_save(const mp4sr_trainer* t, const char* path);
MP4SR_API mp4sr_status mp4sr_trainer_restore(mp4sr_trainer* t, const char* path);
/* Parameters only, e.g. a pre-trained initialization. */
MP4SR_API mp4sr_status mp4sr_trainer_load_parameters(mp4sr_trainer* t, const char* path);
MP4SR_API mp4sr_status mp4sr_trainer_evaluate(const mp4sr_trainer* t, mp4sr_eval_mode mode,
                                              unsigned flags, mp4sr_report** out);
/* Fraction of fine-tuning training instances whose target ranks within k. */
MP4SR_API mp4sr_status mp4sr_trainer_training_recall(const mp4sr_trainer* t, size_t k,
                                                     double* out);
MP4SR_API void mp4sr_trainer_free(mp4sr_trainer* t);

/* ---- reports ---- */
MP4SR_API size_t mp4sr_report_rows(const mp4sr_report* r);
MP4SR_API int mp4sr_report_empty(const mp4sr_report* r);
MP4SR_API mp4sr_status mp4sr_report_row(const mp4sr_report* r, size_t index, mp4sr_metric_row* out);
MP4SR_API mp4sr_status mp4sr_report_write_csv(const mp4sr_report* r, const char* path);
MP4SR_API mp4sr_status mp4sr_report_format(const mp4sr_report* r, char** out);
MP4SR_API void mp4sr_report_free(mp4sr_report* r);

/* ---- ablation ---- */
/* Runs the eight-row variant table (full model plus seven ablations). */
MP4SR_API mp4sr_status mp4sr_ablate(const mp4sr_config* cfg, const mp4sr_data* data,
                                    mp4sr_epoch_callback cb, void* user, mp4sr_ablation** out);
MP4SR_API size_t mp4sr_ablation_rows(const mp4sr_ablation* a);
MP4SR_API mp4sr_status mp4sr_ablation_row(const mp4sr_ablation* a, size_t index, mp4sr_metric_row* out);
MP4SR_API mp4sr_status mp4sr_ablation_write_csv(const mp4sr_ablation* a, const char* path);
MP4SR_API mp4sr_status mp4sr_ablation_format(const mp4sr_ablation* a, char** out);
MP4SR_API void mp4sr_ablation_free(mp4sr_ablation* a);

/* ---- grid search ---- */
/* Runs the 27-point learning-rate x batch-size x weight-decay grid and writes
 * one CSV row per point, best validation R@20 first. */
MP4SR_API mp4sr_status mp4sr_grid_search(const mp4sr_config* cfg, const mp4sr_data* data,
                                         const char* out_csv);

/* ---- loss trajectories ---- */
/* Combines TrainLog CSVs (written with diagnostics on) into one file with
 * columns run_id, epoch, log_train_loss, log_test_loss. */
MP4SR_API mp4sr_status mp4sr_export_trajectory(const char* const* run_ids,
                                               const char* const* log_paths, size_t n,
                                               const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif /* MP4SR_H_ */
