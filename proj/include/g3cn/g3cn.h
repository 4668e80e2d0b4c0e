/* SPDX-License-Identifier: Apache-2.0 */
/**
 * @file   g3cn.h
 * @brief  C interface to the g3cn library.
 *
 * Objects are opaque handles created by `*_create`, `*_load` or `*_read`
 * functions and released with the matching `*_free`. Every fallible call
 * returns a g3cn_status; on failure, g3cn_last_error() describes the most
 * recent error of the calling thread. Strings returned through `char **`
 * out-parameters are owned by the caller and released with g3cn_string_free.
 */
#ifndef G3CN_H
#define G3CN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define G3CN_API __declspec(dllexport)
#else
#define G3CN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum g3cn_status {
  G3CN_OK = 0,
  G3CN_ERR_INVALID_ARGUMENT = 1,
  G3CN_ERR_INVALID_EDGE = 2,
  G3CN_ERR_DISCONNECTED_GRAPH = 3,
  G3CN_ERR_SHAPE_MISMATCH = 4,
  G3CN_ERR_INVALID_AXIS = 5,
  G3CN_ERR_INVALID_LABEL = 6,
  G3CN_ERR_NOT_SCALAR = 7,
  G3CN_ERR_PARSE = 8,
  G3CN_ERR_TRUNCATED_FILE = 9,
  G3CN_ERR_EMPTY_SEQUENCE = 10,
  G3CN_ERR_VERSION_MISMATCH = 11,
  G3CN_ERR_CONFIG = 12,
  G3CN_ERR_DIVERGED_LOSS = 13,
  G3CN_ERR_INVALID_BLOCK = 14,
  G3CN_ERR_IO = 15,
  G3CN_ERR_INTERNAL = 99
} g3cn_status;

typedef struct g3cn_config g3cn_config;
typedef struct g3cn_skeleton g3cn_skeleton;
typedef struct g3cn_dataset g3cn_dataset;
typedef struct g3cn_model g3cn_model;

/** Message of the calling thread's last failure; empty after success. */
G3CN_API const char *g3cn_last_error(void);
G3CN_API const char *g3cn_status_name(g3cn_status status);
G3CN_API void g3cn_string_free(char *s);

/* ---- configuration ---------------------------------------------------- */

/**
 * Loads a config file and applies `key.path=value` overrides. When
 * `has_seed` is nonzero, `seed` replaces the train and synth seeds.
 */
G3CN_API g3cn_status g3cn_config_load(const char *path,
                                      const char *const *overrides,
                                      size_t n_overrides, int has_seed,
                                      uint64_t seed, g3cn_config **out);
/** Fully resolved config with the skeleton inlined. */
G3CN_API g3cn_status g3cn_config_to_json(const g3cn_config *cfg, char **json);
G3CN_API void g3cn_config_free(g3cn_config *cfg);

/* ---- skeletons -------------------------------------------------------- */

G3CN_API g3cn_status g3cn_skeleton_load(const char *path, g3cn_skeleton **out);
G3CN_API size_t g3cn_skeleton_joint_count(const g3cn_skeleton *s);
/** Row-major N x N hop distances into `out` (capacity N * N). */
G3CN_API g3cn_status g3cn_skeleton_distances(const g3cn_skeleton *s, int *out,
                                             size_t capacity);
/** Row-major N x N Gaussian filter exp(-d^2) into `out`. */
G3CN_API g3cn_status g3cn_skeleton_filter(const g3cn_skeleton *s, double *out,
                                          size_t capacity);
G3CN_API void g3cn_skeleton_free(g3cn_skeleton *s);

/* ---- datasets --------------------------------------------------------- */

/** Synthetic ambiguous-action set from the config's synth section. */
G3CN_API g3cn_status g3cn_dataset_generate(const g3cn_config *cfg,
                                           g3cn_dataset **out);
G3CN_API g3cn_status g3cn_dataset_read(const char *path, g3cn_dataset **out);
/** One sequence per tracked body of an NTU `.skeleton` file. */
G3CN_API g3cn_status g3cn_dataset_parse_ntu(const char *path,
                                            g3cn_dataset **out);
G3CN_API g3cn_status g3cn_dataset_write(const g3cn_dataset *d, const char *path);
G3CN_API size_t g3cn_dataset_size(const g3cn_dataset *d);
/** Human-readable per-sequence summary (frames, joints, label, ids). */
G3CN_API g3cn_status g3cn_dataset_summary(const g3cn_dataset *d, char **text);
G3CN_API void g3cn_dataset_free(g3cn_dataset *d);

/* ---- models ----------------------------------------------------------- */

typedef void (*g3cn_epoch_callback)(size_t epoch, double lr, double loss,
                                    double acc, void *user);

/** Fresh network from the config's network and train sections. */
G3CN_API g3cn_status g3cn_model_create(const g3cn_config *cfg, g3cn_model **out);
G3CN_API g3cn_status g3cn_model_load(const char *checkpoint_path,
                                     g3cn_model **out);
G3CN_API g3cn_status g3cn_model_save(const g3cn_model *m,
                                     const char *checkpoint_path);
/**
 * Trains up to the configured epoch count. The metrics CSV is written
 * atomically once training ends (or is skipped when `metrics_path` is NULL);
 * `cb` may be NULL.
 */
G3CN_API g3cn_status g3cn_model_train(g3cn_model *m, const g3cn_dataset *d,
                                      const char *metrics_path,
                                      g3cn_epoch_callback cb, void *user);
/** Accuracy, per-class accuracy and row-normalized confusion as JSON. */
G3CN_API g3cn_status g3cn_model_evaluate(g3cn_model *m, const g3cn_dataset *d,
                                         char **report_json);
/** Evaluation-mode logits, row-major [size, n_classes]. */
G3CN_API g3cn_status g3cn_model_logits(g3cn_model *m, const g3cn_dataset *d,
                                       double *out, size_t capacity,
                                       size_t *written);
G3CN_API size_t g3cn_model_parameter_count(const g3cn_model *m);
G3CN_API size_t g3cn_model_block_count(const g3cn_model *m);
G3CN_API g3cn_status g3cn_model_describe(const g3cn_model *m, char **text);
/**
 * Writes `<prefix>.csv` (averaged N x N topology), `<prefix>.pgm`,
 * `<prefix>_anchor.csv` and `<prefix>_channels.csv` for one sample.
 */
G3CN_API g3cn_status g3cn_model_export_topology(g3cn_model *m,
                                                const g3cn_dataset *d,
                                                size_t sample, size_t block,
                                                size_t anchor_joint,
                                                const char *prefix);
G3CN_API void g3cn_model_free(g3cn_model *m);

/* ---- verification ----------------------------------------------------- */

/**
 * Finite-difference gradient suite. `scope` is "ops", "unit" or "network".
 * A nonzero `fault` scales the tanh derivative by (1 + fault) for the run.
 * `passed` receives 1 when every check passes.
 */
G3CN_API g3cn_status g3cn_grad_check(const char *scope, uint64_t first_seed,
                                     size_t n_seeds, double fault,
                                     int *passed, char **report);

#ifdef __cplusplus
}
#endif

#endif /* G3CN_H */
