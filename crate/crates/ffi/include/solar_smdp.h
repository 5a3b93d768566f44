#ifndef SOLAR_SMDP_H
#define SOLAR_SMDP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmdpStatus {
  SMDP_STATUS_OK = 0,
  SMDP_STATUS_NULL_POINTER = 1,
  SMDP_STATUS_INVALID_UTF8 = 2,
  SMDP_STATUS_CONFIG = 3,
  SMDP_STATUS_VALIDATION = 4,
  SMDP_STATUS_NON_CONVERGENCE = 5,
  SMDP_STATUS_INVALID_ARGUMENT = 6,
  SMDP_STATUS_IO = 7,
  SMDP_STATUS_PANIC = 8,
} SmdpStatus;

/**
 * Validated system plus the solver and simulation settings it was loaded
 * with.
 */
typedef struct SmdpModel SmdpModel;

typedef struct SmdpPolicy SmdpPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 */
const char *smdp_last_error(void);

/**
 * Loads the bundled reference configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum SmdpStatus smdp_model_table2(struct SmdpModel **out);

/**
 * Parses a TOML configuration held in a NUL-terminated string.
 *
 * # Safety
 * `toml` must be NUL-terminated; `out` must be writable.
 */
enum SmdpStatus smdp_model_from_toml(const char *toml, struct SmdpModel **out);

/**
 * # Safety
 * `model` must come from an `smdp_model_*` constructor and not be freed
 * twice. Null is ignored.
 */
void smdp_model_free(struct SmdpModel *model);

/**
 * Number of decision states, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t smdp_model_num_states(const struct SmdpModel *model);

/**
 * Index of state `<[r, m], event>`, where `event` is a 0-based class or -1
 * for a radiation change.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SmdpStatus smdp_state_index(const struct SmdpModel *model,
                                 size_t solar,
                                 uint32_t battery,
                                 int32_t event,
                                 size_t *out);

/**
 * Average-cost optimal policy by relative value iteration. `gain` receives
 * g* when not null.
 *
 * # Safety
 * `model` must be a live handle, `out` writable, `gain` null or writable.
 */
enum SmdpStatus smdp_solve_average(const struct SmdpModel *model,
                                   struct SmdpPolicy **out,
                                   double *gain);

/**
 * Discounted-cost optimal policy by value iteration.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SmdpStatus smdp_solve_discounted(const struct SmdpModel *model, struct SmdpPolicy **out);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SmdpStatus smdp_policy_greedy(const struct SmdpModel *model, struct SmdpPolicy **out);

/**
 * Action code at `state`: 0 macro cell, 1 small cell, -1 no-op.
 *
 * # Safety
 * `policy` must be a live handle and `out` writable.
 */
enum SmdpStatus smdp_policy_action(const struct SmdpPolicy *policy, size_t state, int8_t *out);

/**
 * # Safety
 * `policy` must come from this library and not be freed twice. Null is
 * ignored.
 */
void smdp_policy_free(struct SmdpPolicy *policy);

/**
 * Simulates `runs` runs of `horizon` seconds and reports the mean and sample
 * standard deviation of the per-run average cost.
 *
 * # Safety
 * Handles must be live; `mean` and `stddev` writable.
 */
enum SmdpStatus smdp_simulate(const struct SmdpModel *model,
                              const struct SmdpPolicy *policy,
                              double horizon,
                              size_t runs,
                              uint64_t seed,
                              double *mean,
                              double *stddev);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOLAR_SMDP_H */
