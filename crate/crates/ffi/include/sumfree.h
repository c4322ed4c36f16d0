/* C ABI for the random greedy sum-free process engine. */

#ifndef SUMFREE_H
#define SUMFREE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Ledger detail level, mirroring the engine's run modes.
 */
typedef enum SfMode {
  /**
   * Exact incremental ledger of all tracked counts.
   */
  SF_MODE_FULL = 0,
  /**
   * Statuses only; edge counters are unavailable.
   */
  SF_MODE_LEAN = 1,
} SfMode;

/**
 * Status codes returned by every fallible call.
 */
typedef enum SfStatus {
  SF_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SF_ERR_NULL_ARGUMENT = 1,
  /**
   * The modulus is below 3.
   */
  SF_ERR_INVALID_MODULUS = 2,
  /**
   * The process has terminated; no open element remains.
   */
  SF_ERR_TERMINATED = 3,
  /**
   * The requested counter needs the full ledger but the handle was
   * created in lean mode.
   */
  SF_ERR_MODE_UNSUPPORTED = 4,
  /**
   * The caller's buffer cannot hold the result; the required length has
   * been written to the length out parameter.
   */
  SF_ERR_BUFFER_TOO_SMALL = 5,
} SfStatus;

/**
 * Tracked counters readable through `sf_process_value`.
 */
typedef enum SfVar {
  /**
   * Number of open elements.
   */
  SF_VAR_OPEN_COUNT = 0,
  /**
   * Classes with exactly two open vertices and none closed.
   */
  SF_VAR_E2 = 1,
  /**
   * Classes with all three vertices open.
   */
  SF_VAR_E3 = 2,
  /**
   * Right-degree of 0 among classes with one open vertex left.
   */
  SF_VAR_D2R0 = 3,
  /**
   * Right-degree of 0 among fully open classes.
   */
  SF_VAR_D3R0 = 4,
  /**
   * Fully chosen classes through 0: the pair statistic plus a chosen
   * self-paired element.
   */
  SF_VAR_D1R0 = 5,
  /**
   * Distinct chosen negation pairs.
   */
  SF_VAR_PAIRS_DISTINCT = 6,
} SfVar;

/**
 * Opaque process handle.
 */
typedef struct SfProcess SfProcess;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a process on `Z_m` with the given seed and mode, writing the new
 * handle to `out`.
 *
 * # Safety
 * `out` must be a valid pointer to writable memory for one pointer.
 */
enum SfStatus sf_process_new(uint64_t m, uint64_t seed, enum SfMode mode, struct SfProcess **out);

/**
 * Release a handle. Null is accepted and ignored.
 *
 * # Safety
 * `p` must be null or a handle obtained from `sf_process_new` that has not
 * been freed yet.
 */
void sf_process_free(struct SfProcess *p);

/**
 * Take one step: choose a uniformly random open element, add it to the set
 * and close what that forces. On success writes the chosen element to
 * `chosen_out` and the number of newly closed elements to
 * `closed_count_out` (either may be null if not wanted).
 *
 * # Safety
 * `p` must be a live handle; non-null out pointers must be writable.
 */
enum SfStatus sf_process_step(struct SfProcess *p,
                              uint64_t *chosen_out,
                              uint64_t *closed_count_out);

/**
 * Run at most `max_steps` further steps, stopping early at termination.
 * Writes the number of steps actually taken to `steps_taken_out` (may be
 * null). Reaching termination is not an error.
 *
 * # Safety
 * `p` must be a live handle; a non-null out pointer must be writable.
 */
enum SfStatus sf_process_run(struct SfProcess *p, uint64_t max_steps, uint64_t *steps_taken_out);

/**
 * Number of open elements.
 *
 * # Safety
 * `p` must be null (returns 0) or a live handle.
 */
uint64_t sf_process_open_count(const struct SfProcess *p);

/**
 * Steps taken so far; equals the size of the chosen set.
 *
 * # Safety
 * `p` must be null (returns 0) or a live handle.
 */
uint64_t sf_process_step_index(const struct SfProcess *p);

/**
 * Whether no open element remains.
 *
 * # Safety
 * `p` must be null (returns false) or a live handle.
 */
bool sf_process_is_terminated(const struct SfProcess *p);

/**
 * Rescaled time `t = i / sqrt(n)` with `n = m/2`.
 *
 * # Safety
 * `p` must be null (returns 0) or a live handle.
 */
double sf_process_time(const struct SfProcess *p);

/**
 * Read a tracked counter. Edge counters need a full-ledger handle.
 *
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum SfStatus sf_process_value(const struct SfProcess *p, enum SfVar var, int64_t *out);

/**
 * Copy the chosen set, in the order elements were chosen, into `buf`.
 * Always writes the required length to `len_out`; fills `buf` only when
 * `cap` suffices.
 *
 * # Safety
 * `p` must be a live handle, `len_out` writable, and `buf` must point to at
 * least `cap` writable `uint64_t` slots when `cap > 0`.
 */
enum SfStatus sf_process_copy_chosen(const struct SfProcess *p,
                                     uint64_t *buf,
                                     size_t cap,
                                     size_t *len_out);

/**
 * Crate version as a static NUL-terminated string.
 */
const char *sf_version(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SUMFREE_H */
