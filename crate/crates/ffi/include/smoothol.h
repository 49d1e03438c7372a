#ifndef SMOOTHOL_H
#define SMOOTHOL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmootholStatus {
  SMOOTHOL_STATUS_OK = 0,
  SMOOTHOL_STATUS_NULL_POINTER = 1,
  SMOOTHOL_STATUS_INVALID_ARGUMENT = 2,
  SMOOTHOL_STATUS_CONFIG = 3,
  SMOOTHOL_STATUS_INVARIANT = 4,
  SMOOTHOL_STATUS_SMOOTHNESS_VIOLATED = 5,
  SMOOTHOL_STATUS_IO = 6,
  SMOOTHOL_STATUS_PANIC = 7,
  SMOOTHOL_STATUS_OTHER = 8,
} SmootholStatus;

/**
 * Opaque hypothesis class.
 */
typedef struct SmootholClass SmootholClass;

/**
 * Opaque ERM oracle.
 */
typedef struct SmootholOracle SmootholOracle;

typedef struct SmootholSchedule {
  double eta;
  size_t n;
  size_t m;
  /**
   * NaN when the variant has no label grid.
   */
  double epsilon;
  double zeta;
} SmootholSchedule;

typedef struct SmootholCouplingReport {
  double miss_rate;
  double bound;
  double exp_bound;
  double miss_std;
  double x_marginal_pvalue;
  double z_marginal_pvalue;
  double max_density_ratio;
} SmootholCouplingReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next call into this library from the same thread.
 */
const char *smoothol_last_error(void);

/**
 * Table class from a row-major `hypotheses x atoms` array.
 *
 * # Safety
 * `values` must point to `hypotheses * atoms` doubles; `out` must be writable.
 */
enum SmootholStatus smoothol_class_table(const double *values,
                                         size_t hypotheses,
                                         size_t atoms,
                                         bool binary,
                                         struct SmootholClass **out_class);

/**
 * `size` thresholds on `[0, 1]` evaluated at the midpoints of `atoms` cells.
 *
 * # Safety
 * `out_class` must be writable.
 */
enum SmootholStatus smoothol_class_thresholds(size_t size,
                                              size_t atoms,
                                              struct SmootholClass **out_class);

/**
 * Number of hypotheses, or 0 for NULL.
 *
 * # Safety
 * `class` must be NULL or a live handle.
 */
size_t smoothol_class_len(const struct SmootholClass *class_);

/**
 * Value of hypothesis `h` on atom `atom`.
 *
 * # Safety
 * `class` must be a live handle and `out_value` writable.
 */
enum SmootholStatus smoothol_class_eval(const struct SmootholClass *class_,
                                        size_t h,
                                        uint32_t atom,
                                        double *out_value);

/**
 * # Safety
 * `class` must be NULL or a handle not yet freed.
 */
void smoothol_class_free(struct SmootholClass *class_);

/**
 * Exact oracle over `class` with a named loss (`absolute`, `linear`,
 * `square`, `unit_square`). The class handle may be freed afterwards.
 *
 * # Safety
 * `class` must be a live handle, `loss` a C string, `out_oracle` writable.
 */
enum SmootholStatus smoothol_oracle_new(const struct SmootholClass *class_,
                                        const char *loss,
                                        struct SmootholOracle **out_oracle);

/**
 * Weighted ERM over atom contexts. Row `i` contributes
 * `weights[i] * loss(h(atoms[i]), labels[i])`, or `weights[i] * h(atoms[i])`
 * when `identity` is non-NULL and `identity[i] != 0`. `labels` may be NULL
 * when every row is an identity row.
 *
 * # Safety
 * Arrays must hold `len` elements; outputs must be writable.
 */
enum SmootholStatus smoothol_oracle_query(struct SmootholOracle *oracle,
                                          const uint32_t *atoms,
                                          const double *labels,
                                          const double *weights,
                                          const uint8_t *identity,
                                          size_t len,
                                          size_t *out_index,
                                          double *out_objective);

/**
 * # Safety
 * `oracle` must be NULL or a live handle.
 */
uint64_t smoothol_oracle_call_count(const struct SmootholOracle *oracle);

/**
 * # Safety
 * `oracle` must be NULL or a handle not yet freed.
 */
void smoothol_oracle_free(struct SmootholOracle *oracle);

/**
 * Inverse-gap-weighted action distribution for `k` predicted losses.
 *
 * # Safety
 * `predictions` and `out_probs` must hold `k` doubles.
 */
enum SmootholStatus smoothol_igw(const double *predictions,
                                 size_t k,
                                 double gamma,
                                 double *out_probs);

/**
 * Smoothness of the context-action pair when actions are drawn from any
 * distribution over `k` actions: `sigma / k`.
 *
 * # Safety
 * `out_sigma` must be writable.
 */
enum SmootholStatus smoothol_compose_smoothness(double sigma, size_t k, double *out_sigma);

/**
 * Default FTPL parameters. `variant` is `classification`, `dual` or `single`.
 *
 * # Safety
 * `variant` must be a C string and `out_schedule` writable.
 */
enum SmootholStatus smoothol_ftpl_schedule(size_t horizon,
                                           double sigma,
                                           double lipschitz,
                                           double d_or_p,
                                           const char *variant,
                                           struct SmootholSchedule *out_schedule);

/**
 * Coupling check with uniform `mu` on `atoms` points and the most
 * concentrated `sigma`-smooth `p`.
 *
 * # Safety
 * `out_report` must be writable.
 */
enum SmootholStatus smoothol_couple_test(double sigma,
                                         size_t k,
                                         size_t trials,
                                         size_t atoms,
                                         uint64_t seed,
                                         struct SmootholCouplingReport *out_report);

/**
 * Minimizes a convex sequence given at `len` grid points, calling
 * `objective` once per distinct index it needs.
 *
 * # Safety
 * `grid` must hold `len` doubles; outputs must be writable; `objective`
 * must be safe to call with `user_data`.
 */
enum SmootholStatus smoothol_three_point_min(const double *grid,
                                             size_t len,
                                             double (*objective)(size_t index, void *user_data),
                                             void *user_data,
                                             size_t *out_index,
                                             size_t *out_evaluations);

/**
 * Runs an experiment config given as JSON and returns the summary as a
 * JSON string; release it with [`smoothol_string_free`].
 *
 * # Safety
 * `config_json` must be a C string and `out_summary` writable.
 */
enum SmootholStatus smoothol_run_experiment_json(const char *config_json, char **out_summary);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void smoothol_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMOOTHOL_H */
