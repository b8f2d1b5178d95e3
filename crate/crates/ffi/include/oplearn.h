#ifndef OPLEARN_H
#define OPLEARN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OplStatus {
  OPL_STATUS_OK = 0,
  OPL_STATUS_NULL_POINTER = 1,
  OPL_STATUS_DIMENSION_MISMATCH = 2,
  OPL_STATUS_INVALID_PARAMETER = 3,
  OPL_STATUS_DOMAIN = 4,
  OPL_STATUS_UNSUPPORTED = 5,
  OPL_STATUS_INFEASIBLE = 6,
  OPL_STATUS_PROTOCOL = 7,
  OPL_STATUS_CONFIG = 8,
  OPL_STATUS_NUMERICAL = 9,
  OPL_STATUS_IO = 10,
  OPL_STATUS_PANIC = 11,
} OplStatus;

/**
 * Regularizer choice for [`opl_learner_oftrl`].
 */
typedef enum OplRegularizer {
  OPL_REGULARIZER_QUADRATIC = 0,
  OPL_REGULARIZER_QUADRATIC_PROXIMAL = 1,
  OPL_REGULARIZER_ENTROPIC = 2,
} OplRegularizer;

/**
 * Opaque online learner.
 */
typedef struct OplLearner OplLearner;

/**
 * Opaque feasible set.
 */
typedef struct OplSet OplSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *opl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *opl_version(void);

/**
 * `{x ∈ [0,1]^n : Σx ≤ cap}`.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum OplStatus opl_set_capped_simplex(size_t n, double cap, struct OplSet **out);

/**
 * `[lo, hi]^n`.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum OplStatus opl_set_box(size_t n, double lo, double hi, struct OplSet **out);

/**
 * The probability simplex in `n` dimensions.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum OplStatus opl_set_unit_simplex(size_t n, struct OplSet **out);

/**
 * Euclidean ball of `radius` around the origin.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum OplStatus opl_set_ball(size_t n, double radius, struct OplSet **out);

/**
 * # Safety
 * `set` must be a handle from an `opl_set_*` constructor, or NULL.
 */
void opl_set_free(struct OplSet *set);

/**
 * Dimension of `set`, 0 for NULL.
 *
 * # Safety
 * `set` must be a live handle or NULL.
 */
size_t opl_set_dim(const struct OplSet *set);

/**
 * Euclidean diameter of `set`.
 *
 * # Safety
 * `set` must be a live handle; `out` a valid pointer.
 */
enum OplStatus opl_set_diameter(const struct OplSet *set, double *out);

/**
 * Euclidean projection of `x` onto `set`, written to `out`. `x` and `out`
 * may alias.
 *
 * # Safety
 * `x` and `out` must point to `len` doubles.
 */
enum OplStatus opl_set_project(const struct OplSet *set, const double *x, double *out, size_t len);

/**
 * OGD with the anytime step `D/(L√t)`. The set is copied.
 *
 * # Safety
 * `set` must be a live handle; `out` a valid pointer.
 */
enum OplStatus opl_learner_ogd(const struct OplSet *set, double lipschitz, struct OplLearner **out);

/**
 * Optimistic FTRL. A non-positive `sigma` selects the default `1/(√2 D)`.
 * The set is copied.
 *
 * # Safety
 * `set` must be a live handle; `out` a valid pointer.
 */
enum OplStatus opl_learner_oftrl(const struct OplSet *set,
                                 enum OplRegularizer regularizer,
                                 double sigma,
                                 struct OplLearner **out);

/**
 * # Safety
 * `learner` must be a handle from an `opl_learner_*` constructor, or NULL.
 */
void opl_learner_free(struct OplLearner *learner);

/**
 * # Safety
 * `learner` must be a live handle or NULL.
 */
size_t opl_learner_dim(const struct OplLearner *learner);

/**
 * Writes the next decision to `out`. `hint` is the predicted gradient, or
 * NULL for none.
 *
 * # Safety
 * `hint` (when non-NULL) and `out` must point to `len` doubles.
 */
enum OplStatus opl_learner_decide(struct OplLearner *learner,
                                  const double *hint,
                                  double *out,
                                  size_t len);

/**
 * Reveals the loss gradient of the slot just played.
 *
 * # Safety
 * `grad` must point to `len` doubles.
 */
enum OplStatus opl_learner_observe(struct OplLearner *learner, const double *grad, size_t len);

/**
 * Accumulated prediction error; NaN for learners that do not track it.
 *
 * # Safety
 * `learner` must be a live handle or NULL.
 */
double opl_learner_error_sum(const struct OplLearner *learner);

/**
 * Runs the TOML experiment `config`. On success `summary_json` receives the
 * run summary (free with [`opl_string_free`]); the slot log is written to
 * `log_path` unless it is NULL.
 *
 * # Safety
 * `config` and `log_path` (when non-NULL) must be NUL-terminated UTF-8;
 * `summary_json` must be a valid pointer.
 */
enum OplStatus opl_run_experiment(const char *config, const char *log_path, char **summary_json);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void opl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPLEARN_H */
