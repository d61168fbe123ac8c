/* C interface to the paralbench evaluation library. */

#ifndef PARALBENCH_H
#define PARALBENCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code for every fallible call.
 */
typedef enum {
  /**
   * Success; `out` parameters hold results.
   */
  PLB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PLB_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PLB_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument value was rejected (empty class list, duplicate
   * classes, non-finite regression values, ...).
   */
  PLB_STATUS_INVALID_ARGUMENT = 3,
  /**
   * An index argument was outside the valid range.
   */
  PLB_STATUS_OUT_OF_RANGE = 4,
  /**
   * The operation needs at least one sample.
   */
  PLB_STATUS_EMPTY = 5,
  /**
   * Two parallel arrays disagreed on length.
   */
  PLB_STATUS_LENGTH_MISMATCH = 6,
  /**
   * The label did not resolve to any class of the space.
   */
  PLB_STATUS_UNKNOWN_LABEL = 7,
  /**
   * No class of the test space mapped onto the train space.
   */
  PLB_STATUS_NO_OVERLAP = 8,
  /**
   * Unexpected internal failure (a bug, never routine).
   */
  PLB_STATUS_INTERNAL = 99,
} PlbStatus;

/**
 * Classification metric selector for [`plb_evaluator_metric`].
 */
typedef enum {
  /**
   * Overall fraction of correct predictions (weighted accuracy).
   */
  PLB_METRIC_WEIGHTED_ACCURACY = 0,
  /**
   * Mean of per-class recalls over classes with support (unweighted
   * accuracy / balanced accuracy).
   */
  PLB_METRIC_UNWEIGHTED_ACCURACY = 1,
  /**
   * Support-weighted mean of per-class F1 scores.
   */
  PLB_METRIC_WEIGHTED_F1 = 2,
} PlbMetric;

/**
 * Opaque accumulator of (reference, prediction) class-index pairs.
 */
typedef struct PlbEvaluator PlbEvaluator;

/**
 * Opaque canonicalized label space with alias-aware resolution.
 */
typedef struct PlbLabelSpace PlbLabelSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Never freed.
 */
const char *plb_version(void);

/**
 * Static human-readable description of a status code. Never freed.
 */
const char *plb_status_message(PlbStatus status);

/**
 * Create a label space from `class_count` class-name strings.
 *
 * Names are canonicalized (case-folded, punctuation-stripped) and the
 * space resolves common emotion-vocabulary aliases, so later lookups of
 * e.g. `"Happy"` can land on a class declared as `"happiness"`.
 *
 * # Safety
 * `name` must be NUL-terminated; `class_names` must point at
 * `class_count` NUL-terminated strings; `out` must be a valid pointer.
 */
PlbStatus plb_label_space_new(const char *name,
                              const char *const *class_names,
                              uintptr_t class_count,
                              PlbLabelSpace **out);

/**
 * Release a label space. Null is ignored.
 *
 * # Safety
 * `space` must be null or a pointer from [`plb_label_space_new`] that has
 * not been freed yet.
 */
void plb_label_space_free(PlbLabelSpace *space);

/**
 * Number of classes; 0 for null.
 *
 * # Safety
 * `space` must be null or a live label-space handle.
 */
uintptr_t plb_label_space_len(const PlbLabelSpace *space);

/**
 * The space's name; owned by the handle. Null for null input.
 *
 * # Safety
 * `space` must be null or a live label-space handle.
 */
const char *plb_label_space_name(const PlbLabelSpace *space);

/**
 * Resolve a raw label spelling to its class index.
 *
 * # Safety
 * `space` must be a live handle, `raw` NUL-terminated, `out_index` valid.
 */
PlbStatus plb_label_space_resolve(const PlbLabelSpace *space,
                                  const char *raw,
                                  uintptr_t *out_index);

/**
 * Canonical name of class `index`; owned by the handle.
 *
 * # Safety
 * `space` must be a live handle and `out_name` a valid pointer.
 */
PlbStatus plb_label_space_class_name(const PlbLabelSpace *space,
                                     uintptr_t index,
                                     const char **out_name);

/**
 * Map every class of `test` onto a class of `train` by canonical name:
 * writes one entry per test class into `out_map` (length `map_len`,
 * which must equal the test space's class count) — the train-space class
 * index, or -1 for classes with no counterpart. Fails with
 * `PLB_STATUS_NO_OVERLAP` when nothing maps.
 *
 * # Safety
 * `train` and `test` must be live handles and `out_map` must point at
 * `map_len` writable entries.
 */
PlbStatus plb_label_mapping(const PlbLabelSpace *train,
                            const PlbLabelSpace *test,
                            int64_t *out_map,
                            uintptr_t map_len);

/**
 * Create an evaluator over `classes` classes (must be at least 1).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
PlbStatus plb_evaluator_new(uintptr_t classes, PlbEvaluator **out);

/**
 * Release an evaluator. Null is ignored.
 *
 * # Safety
 * `eval` must be null or a pointer from [`plb_evaluator_new`] that has
 * not been freed yet.
 */
void plb_evaluator_free(PlbEvaluator *eval);

/**
 * Record one (reference, prediction) pair of class indices.
 *
 * # Safety
 * `eval` must be a live evaluator handle.
 */
PlbStatus plb_evaluator_add(PlbEvaluator *eval, uintptr_t reference, uintptr_t prediction);

/**
 * Record `n` pairs from parallel arrays. Rejects the whole batch if any
 * index is out of range, leaving the evaluator unchanged.
 *
 * # Safety
 * `eval` must be a live handle; `references` and `predictions` must each
 * point at `n` readable entries.
 */
PlbStatus plb_evaluator_add_batch(PlbEvaluator *eval,
                                  const uintptr_t *references,
                                  const uintptr_t *predictions,
                                  uintptr_t n);

/**
 * Number of recorded pairs; 0 for null.
 *
 * # Safety
 * `eval` must be null or a live evaluator handle.
 */
uintptr_t plb_evaluator_count(const PlbEvaluator *eval);

/**
 * Forget all recorded pairs, keeping the class count.
 *
 * # Safety
 * `eval` must be null or a live evaluator handle.
 */
void plb_evaluator_reset(PlbEvaluator *eval);

/**
 * Compute one classification metric over the recorded pairs.
 *
 * # Safety
 * `eval` must be a live handle and `out_value` a valid pointer.
 */
PlbStatus plb_evaluator_metric(const PlbEvaluator *eval, PlbMetric metric, double *out_value);

/**
 * Mean absolute error over `n` reference/prediction pairs.
 *
 * # Safety
 * `references` and `predictions` must each point at `n` readable values
 * and `out_value` must be a valid pointer.
 */
PlbStatus plb_mae(const double *references,
                  const double *predictions,
                  uintptr_t n,
                  double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARALBENCH_H */
