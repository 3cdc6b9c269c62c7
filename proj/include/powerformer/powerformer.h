/*
 * powerformer C API: time-series forecasting with weighted causal multihead
 * attention (power-law and Butterworth decay masks), channel-independent
 * patching and an encoder-only forecaster.
 *
 * All functions are thread-compatible: handles must not be shared between
 * threads without external synchronization, but distinct handles are
 * independent. Errors are reported through status codes; pf_last_error()
 * returns a thread-local message for the most recent failure.
 */
#ifndef POWERFORMER_H
#define POWERFORMER_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pf_status {
  PF_OK = 0,
  PF_ERR_CONFIG = 1,      /* bad config key/value or config file */
  PF_ERR_DATA = 2,        /* dataset / artifact missing or malformed */
  PF_ERR_DIVERGENCE = 3,  /* training loss stopped being finite */
  PF_ERR_INVALID = 4,     /* contract violation (bad argument) */
  PF_ERR_IO = 5,          /* filesystem failure */
  PF_ERR_INTERNAL = 6
} pf_status;

const char* pf_version(void);
/* Message for the last failing call on this thread; empty if none. */
const char* pf_last_error(void);

/* ------------------------------------------------------------------ */
/* Configuration: flat "key = value" text, demonstrated in README.md.  */

typedef struct pf_config pf_config;

pf_config* pf_config_new(void);
/* NULL on failure (see pf_last_error). */
pf_config* pf_config_read(const char* path);
pf_status pf_config_set(pf_config* cfg, const char* key, const char* value);
/* Copies the raw value for `key` into buf (NUL-terminated); PF_ERR_INVALID
 * if the key was never set or buf is too small. */
pf_status pf_config_get(const pf_config* cfg, const char* key, char* buf,
                        size_t buf_len);
void pf_config_free(pf_config* cfg);

/* ------------------------------------------------------------------ */
/* Datasets.                                                           */

typedef struct pf_dataset pf_dataset;

/* Resolves the dataset described by the config (CSV or synthetic). */
pf_dataset* pf_dataset_open(const pf_config* cfg);
int64_t pf_dataset_rows(const pf_dataset* ds);
int32_t pf_dataset_channels(const pf_dataset* ds);
/* Per-channel lag autocorrelation curve as CSV (channel,lag,correlation). */
pf_status pf_dataset_autocorr_csv(const pf_dataset* ds, int64_t max_lag,
                                  const char* out_csv);
void pf_dataset_free(pf_dataset* ds);

/* ------------------------------------------------------------------ */
/* Decay masks.                                                        */

/* family: "none" | "pl" | "spl" | "bw1" | "bw2" (or the long names).
 * Writes the composed causal+decay additive mask into out (patches*patches,
 * row-major); masked entries are -INFINITY. alpha is used by the power-law
 * families, order/critical_time by the Butterworth family. */
pf_status pf_mask_render(const char* family, double alpha, int32_t order,
                         double critical_time, int64_t patches, double* out);
/* Matrix CSV dump plus an optional per-lag profile CSV (NULL to skip). */
pf_status pf_mask_dump(const char* family, double alpha, int32_t order,
                       double critical_time, int64_t patches,
                       const char* out_csv, const char* profile_csv);

/* ------------------------------------------------------------------ */
/* Runs: each writes artifacts under a run directory derived from the  */
/* config hash and seed.                                               */

/* Trains one model per the config; writes checkpoint.pfckpt,
 * run_record.json and manifest.json under <run_root>/<hash>_s<seed>/ and
 * copies that directory path into run_dir_out when given. */
pf_status pf_train(const pf_config* cfg, const char* run_root,
                   char* run_dir_out, size_t run_dir_cap);

/* Aggregates run records under run_root into the evaluation-protocol CSV
 * (mean/stddev over seeds, look-back and per-horizon mask selection).
 * Missing grid entries are reported via pf_last_error as a warning list
 * (status stays PF_OK when at least one run aggregated). */
pf_status pf_evaluate(const pf_config* cfg, const char* run_root,
                      const char* out_csv);

/* Attention score/weight distribution analysis of a trained checkpoint over
 * the test split: histogram CSVs, SVG plots, a JSON manifest and the mask
 * envelope deviation. */
pf_status pf_analyze(const pf_config* cfg, const char* checkpoint_path,
                     const char* out_dir);

/* ------------------------------------------------------------------ */
/* Direct model access.                                                */

typedef struct pf_model pf_model;

pf_model* pf_model_open(const char* checkpoint_path);
int64_t pf_model_lookback(const pf_model* model);
int64_t pf_model_horizon(const pf_model* model);
/* history: channels x t_seq row-major; out: channels x t_pred row-major.
 * Inputs and outputs share a scale; instance normalization is internal. */
pf_status pf_model_forecast(const pf_model* model, const double* history,
                            int32_t channels, int64_t t_seq, double* out,
                            int64_t t_pred);
void pf_model_free(pf_model* model);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* POWERFORMER_H */
