#ifndef MIMO_DAE_H
#define MIMO_DAE_H

/* Generated by cbindgen from mimo-dae-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible function.
typedef enum MimoDaeStatus {
  MIMO_DAE_STATUS_OK = 0,
  // A required pointer argument was null.
  MIMO_DAE_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  MIMO_DAE_STATUS_INVALID_UTF8 = 2,
  // Configuration parsing or validation failed; see last_error.
  MIMO_DAE_STATUS_INVALID_CONFIG = 3,
  // Training, evaluation, or I/O failed; see last_error.
  MIMO_DAE_STATUS_RUNTIME_ERROR = 4,
  // A panic was caught at the boundary; see last_error.
  MIMO_DAE_STATUS_PANIC = 5,
} MimoDaeStatus;

// Opaque parsed-and-validated experiment configuration.
typedef struct MimoDaeExperiment MimoDaeExperiment;

// Opaque trained model: network parameters plus their architecture config.
typedef struct MimoDaeModel MimoDaeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Crate version as a static NUL-terminated string.
const char *mimo_dae_version(void);

// Message of the most recent error on this thread. Valid until the next
// failing call on the same thread.
const char *mimo_dae_last_error(void);

// Parse experiment TOML into a handle. On success `out` owns the handle;
// release it with `mimo_dae_experiment_free`.
//
// # Safety
// `toml_text` must be a valid NUL-terminated C string and `out` a valid
// pointer.
enum MimoDaeStatus mimo_dae_experiment_parse(const char *toml_text, struct MimoDaeExperiment **out);

// # Safety
// `handle` must come from `mimo_dae_experiment_parse` (or be null).
void mimo_dae_experiment_free(struct MimoDaeExperiment *handle);

// Train a model under the experiment's config and schedule.
//
// # Safety
// `experiment` must be a live handle; `out` must be a valid pointer.
enum MimoDaeStatus mimo_dae_train(const struct MimoDaeExperiment *experiment,
                                  struct MimoDaeModel **out);

// # Safety
// `handle` must come from this library (or be null).
void mimo_dae_model_free(struct MimoDaeModel *handle);

// Save a model as a checkpoint file.
//
// # Safety
// `model` must be a live handle; `path` a valid NUL-terminated string.
enum MimoDaeStatus mimo_dae_model_save(const struct MimoDaeModel *model, const char *path);

// Load a checkpoint file into a model handle.
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` a valid pointer.
enum MimoDaeStatus mimo_dae_model_load(const char *path, struct MimoDaeModel **out);

// Sweep the model over the experiment's grid; write CSV and JSON curves.
//
// # Safety
// All handles must be live; paths must be valid NUL-terminated strings.
enum MimoDaeStatus mimo_dae_eval_to_files(const struct MimoDaeModel *model,
                                          const struct MimoDaeExperiment *experiment,
                                          const char *csv_path,
                                          const char *json_path);

// Sweep the classical baseline over the experiment's grid to CSV.
//
// # Safety
// `experiment` must be live; `csv_path` a valid NUL-terminated string.
enum MimoDaeStatus mimo_dae_baseline_to_csv(const struct MimoDaeExperiment *experiment,
                                            const char *csv_path);

// Monte Carlo BER of the model at one Eb/N0 point.
//
// # Safety
// Handles must be live; `ber_out` must point to writable memory.
enum MimoDaeStatus mimo_dae_eval_point(const struct MimoDaeModel *model,
                                       const struct MimoDaeExperiment *experiment,
                                       double ebn0_db,
                                       uint64_t frames_per_point,
                                       double *ber_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIMO_DAE_H */
