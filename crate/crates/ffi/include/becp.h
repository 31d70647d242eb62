#ifndef BECP_H
#define BECP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BecpStatus {
  BECP_STATUS_OK = 0,
  BECP_STATUS_NULL_POINTER = 1,
  BECP_STATUS_INVALID_UTF8 = 2,
  BECP_STATUS_CONFIG = 3,
  BECP_STATUS_IO = 4,
  BECP_STATUS_NOT_RUN = 5,
  BECP_STATUS_OUT_OF_RANGE = 6,
  BECP_STATUS_PANIC = 7,
} BecpStatus;

/**
 * Opaque experiment handle: a resolved configuration and, once run, its
 * outcome.
 */
typedef struct BecpExperiment BecpExperiment;

/**
 * Seed-averaged results of one configuration. Values that do not apply
 * are NaN.
 */
typedef struct BecpSummary {
  size_t n_nodes;
  size_t trials;
  size_t failed_trials;
  double p_block;
  double blocks_confirmed;
  double throughput_bps;
  double avg_latency_s;
  double messages_sent;
  double fork_calls_per_block_per_node;
  bool pass;
} BecpSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next call
 * into the library on this thread.
 */
const char *becp_last_error(void);

/**
 * Library version as a static string.
 */
const char *becp_version(void);

/**
 * Parses a TOML configuration (the same keys the CLI accepts) and
 * resolves it. `allow_unsafe` lifts the Pareto shape range check.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BecpStatus becp_experiment_new(const char *config_toml,
                                    bool allow_unsafe,
                                    struct BecpExperiment **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `h` must come from [`becp_experiment_new`] and not be used afterwards.
 */
void becp_experiment_free(struct BecpExperiment *h);

/**
 * Runs every configuration and trial. Blocks until done.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum BecpStatus becp_experiment_run(struct BecpExperiment *h);

/**
 * Number of configurations (sweep points) in the experiment.
 *
 * # Safety
 * `h` must be a live handle and `out` a valid pointer.
 */
enum BecpStatus becp_experiment_config_count(const struct BecpExperiment *h, size_t *out);

/**
 * Aggregate results of configuration `index`.
 *
 * # Safety
 * `h` must be a live handle and `out` a valid pointer.
 */
enum BecpStatus becp_experiment_summary(const struct BecpExperiment *h,
                                        size_t index,
                                        struct BecpSummary *out);

/**
 * Whether every trial of every configuration passed the ledger check.
 *
 * # Safety
 * `h` must be a live handle and `out` a valid pointer.
 */
enum BecpStatus becp_experiment_passed(const struct BecpExperiment *h, bool *out);

/**
 * Results as CSV text, header included. Free with [`becp_string_free`].
 *
 * # Safety
 * `h` must be a live handle and `out` a valid pointer.
 */
enum BecpStatus becp_experiment_csv(const struct BecpExperiment *h, char **out);

/**
 * Writes results.csv, summary.txt and ledgers.txt under `dir`, or under
 * the configured output directory when `dir` is null.
 *
 * # Safety
 * `h` must be a live handle; `dir` null or NUL-terminated.
 */
enum BecpStatus becp_experiment_write(const struct BecpExperiment *h, const char *dir);

/**
 * Frees a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void becp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BECP_H */
