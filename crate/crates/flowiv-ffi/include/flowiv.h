/* C interface for the flowiv traffic-flow estimators. */

#ifndef FLOWIV_H
#define FLOWIV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum FlowivStatus {
  FLOWIV_STATUS_OK = 0,
  FLOWIV_STATUS_NULL_ARGUMENT = 1,
  FLOWIV_STATUS_INVALID_ARGUMENT = 2,
  FLOWIV_STATUS_EMPTY_INPUT = 3,
  FLOWIV_STATUS_NUMERIC = 4,
  FLOWIV_STATUS_DIVERGED = 5,
  FLOWIV_STATUS_INSUFFICIENT_DENSITY = 6,
  FLOWIV_STATUS_IO = 7,
  FLOWIV_STATUS_BUFFER_TOO_SMALL = 8,
  FLOWIV_STATUS_PANIC = 9,
} FlowivStatus;

/**
 * Which column of a fitted band to copy out.
 */
typedef enum FlowivCurve {
  FLOWIV_CURVE_GRID = 0,
  FLOWIV_CURVE_MEAN = 1,
  FLOWIV_CURVE_POINTWISE_LO = 2,
  FLOWIV_CURVE_POINTWISE_HI = 3,
  FLOWIV_CURVE_SIMULTANEOUS_LO = 4,
  FLOWIV_CURVE_SIMULTANEOUS_HI = 5,
} FlowivCurve;

/**
 * Three-valued significance call.
 */
typedef enum FlowivTri {
  FLOWIV_TRI_NO = 0,
  FLOWIV_TRI_YES = 1,
  FLOWIV_TRI_INDETERMINATE = 2,
} FlowivTri;

/**
 * A completed fit: retained draws plus the summarized bands.
 */
typedef struct FlowivFit FlowivFit;

/**
 * Owned regression data; create with [`flowiv_sample_new`].
 */
typedef struct FlowivSample FlowivSample;

/**
 * Sampler and basis settings; get defaults from
 * [`flowiv_fit_options_default`] and override fields as needed.
 */
typedef struct FlowivFitOptions {
  /**
   * Total Gibbs sweeps including burn-in.
   */
  uint64_t draws;
  uint64_t burn_in;
  /**
   * Keep every `thin`-th post-burn-in sweep.
   */
  uint64_t thin;
  /**
   * Evaluation grid size for retained curves.
   */
  uint64_t grid_points;
  uint64_t seed;
  /**
   * Band miscoverage level in (0, 0.5]; 0.05 gives 95% bands.
   */
  double delta;
  /**
   * Interior knot count for each spline basis.
   */
  uint64_t interior_knots;
  /**
   * Spline degree (3 is cubic).
   */
  uint64_t degree;
  /**
   * Truncation level of the error mixture.
   */
  uint64_t truncation;
  /**
   * Skip the first stage and fit flow on occupancy alone.
   */
  bool exogenous;
} FlowivFitOptions;

/**
 * Capacity summary in the flow units of the input (per 5 minutes).
 */
typedef struct FlowivCapacity {
  double o_critical;
  double capacity_per_5min;
  double capacity_per_hr;
  /**
   * Peak sits on the edge of the data-supported range.
   */
  bool boundary;
  /**
   * The post-peak fields below are meaningful only when true.
   */
  bool has_drop;
  double o_post_drop;
  double flow_post_drop;
  double drop_percent;
  enum FlowivTri significant;
  bool backward_bend;
  uint64_t supported_points;
} FlowivCapacity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *flowiv_version(void);

/**
 * Message for the calling thread's most recent failure. The pointer stays
 * valid until the next failing call on the same thread. Never null.
 */
const char *flowiv_last_error_message(void);

/**
 * Build a sample from parallel arrays of flow, occupancy, and instrument,
 * each `len` long. On success writes an owned handle to `out`.
 *
 * # Safety
 * `q`, `o`, and `z` must point to `len` readable doubles; `out` must be a
 * valid write target.
 */
enum FlowivStatus flowiv_sample_new(const double *q,
                                    const double *o,
                                    const double *z,
                                    uintptr_t len,
                                    struct FlowivSample **out);

/**
 * Number of observations in the sample; 0 for null.
 *
 * # Safety
 * `sample` must be null or a live handle from [`flowiv_sample_new`].
 */
uintptr_t flowiv_sample_len(const struct FlowivSample *sample);

/**
 * Release a sample handle.
 *
 * # Safety
 * `sample` must be null or an unreleased handle from
 * [`flowiv_sample_new`].
 */
void flowiv_sample_free(struct FlowivSample *sample);

/**
 * Default sampler settings: the short profile with cubic splines.
 */
struct FlowivFitOptions flowiv_fit_options_default(void);

/**
 * Fit the model and write an owned fit handle to `out`.
 *
 * # Safety
 * `sample` must be a live handle, `options` and `out` valid pointers.
 */
enum FlowivStatus flowiv_fit(const struct FlowivSample *sample,
                             const struct FlowivFitOptions *options,
                             struct FlowivFit **out);

/**
 * Release a fit handle.
 *
 * # Safety
 * `fit` must be null or an unreleased handle from [`flowiv_fit`].
 */
void flowiv_fit_free(struct FlowivFit *fit);

/**
 * Grid length of the fitted bands; 0 for null.
 *
 * # Safety
 * `fit` must be null or a live handle from [`flowiv_fit`].
 */
uintptr_t flowiv_fit_grid_len(const struct FlowivFit *fit);

/**
 * Number of retained posterior draws; 0 for null.
 *
 * # Safety
 * `fit` must be null or a live handle from [`flowiv_fit`].
 */
uintptr_t flowiv_fit_draw_count(const struct FlowivFit *fit);

/**
 * Copy one band column into `out` (capacity `cap` doubles). The flow band
 * is the default; set `first_stage` for the instrument equation, which
 * exists only on instrumented fits.
 *
 * # Safety
 * `fit` must be a live handle and `out` must point to `cap` writable
 * doubles.
 */
enum FlowivStatus flowiv_fit_curve(const struct FlowivFit *fit,
                                   enum FlowivCurve curve,
                                   bool first_stage,
                                   double *out,
                                   uintptr_t cap);

/**
 * Capacity analysis of the fitted flow band. Pass non-positive
 * `density_floor` or `window` to use the defaults (0.005 and 10 occupancy
 * points).
 *
 * # Safety
 * `fit` must be a live handle and `out` a valid write target.
 */
enum FlowivStatus flowiv_fit_capacity(const struct FlowivFit *fit,
                                      double density_floor,
                                      double window,
                                      struct FlowivCapacity *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWIV_H */
