#ifndef OPTSEQ_H
#define OPTSEQ_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Kind of the sufficient statistic passed to threshold lookups.
 */
typedef enum OsStatisticKind {
  /*
   i.i.d. model; `value` is ignored.
   */
  OS_STATISTIC_KIND_UNIT = 0,
  /*
   Two-state chain; `value` is 1 or 2.
   */
  OS_STATISTIC_KIND_STATE = 1,
  /*
   AR(1); `value` is the previous observation.
   */
  OS_STATISTIC_KIND_REAL = 2,
} OsStatisticKind;

/*
 Result of every call.
 */
typedef enum OsStatus {
  OS_STATUS_OK = 0,
  OS_STATUS_NULL_POINTER = 1,
  OS_STATUS_INVALID_ARGUMENT = 2,
  OS_STATUS_SOLVER_FAILURE = 3,
  OS_STATUS_TRIVIAL_TEST = 4,
  OS_STATUS_BUFFER_TOO_SMALL = 5,
  OS_STATUS_PANIC = 6,
} OsStatus;

/*
 Designed test handle.
 */
typedef struct OsDesign OsDesign;

/*
 Observation model handle.
 */
typedef struct OsModel OsModel;

/*
 Executable test policy handle.
 */
typedef struct OsPolicy OsPolicy;

typedef struct OsStatistic {
  enum OsStatisticKind kind;
  double value;
} OsStatistic;

/*
 Summary of a Monte Carlo run.
 */
typedef struct OsSimulation {
  uint64_t runs;
  uint64_t decided;
  uint64_t errors;
  uint64_t censored;
  double empirical_error;
  double error_std_err;
  double mean_run_length;
  double run_length_std_err;
} OsSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread (empty after a
 success). Valid until the next call on the same thread.
 */
const char *os_last_error(void);

/*
 i.i.d. Gaussian observations, mean 0 under H0 and `mu` under H1.
 */
enum OsStatus os_model_iid(double mu, double sigma, struct OsModel **out);

/*
 Observable two-state chain; `p0` is the H0 state law (2 values), `p1` the
 H1 transition matrix in row-major order (4 values).

 # Safety
 `p0` and `p1` must point to 2 and 4 readable doubles.
 */
enum OsStatus os_model_chain(double sigma,
                             const double *p0,
                             const double *p1,
                             struct OsModel **out);

/*
 AR(1) observations `x' = a·θ + σε` with `a = a0` under H0, `a1` under H1.
 */
enum OsStatus os_model_ar1(double a0, double a1, double sigma, double theta0, struct OsModel **out);

/*
 # Safety
 `model` must be null or a handle from `os_model_*` not yet freed.
 */
void os_model_free(struct OsModel *model);

/*
 Designs the optimal test for targets `(gamma0, gamma1)` on an
 `m_z × m_theta` grid (`m_theta` is ignored except for AR(1)); both counts
 must be odd.

 # Safety
 `model` must be a live model handle; `out` must be writable.
 */
enum OsStatus os_design(const struct OsModel *model,
                        double gamma0,
                        double gamma1,
                        size_t m_z,
                        size_t m_theta,
                        struct OsDesign **out);

/*
 # Safety
 `design` must be a live design handle; outputs must be writable.
 */
enum OsStatus os_design_lambda(const struct OsDesign *design, double *lambda0, double *lambda1);

/*
 Expected run-length under H0 of the designed test.

 # Safety
 `design` must be a live design handle; `out` must be writable.
 */
enum OsStatus os_design_expected_run_length(const struct OsDesign *design, double *out);

/*
 Number of grid cells, i.e. the length of the cost-to-go vector.

 # Safety
 `design` must be a live design handle; `out` must be writable.
 */
enum OsStatus os_design_num_cells(const struct OsDesign *design, size_t *out);

/*
 Copies the cost-to-go vector into `buf` (length `len`); fails with
 `BufferTooSmall` if `len` is below the number of cells.

 # Safety
 `design` must be a live design handle; `buf` must hold `len` doubles.
 */
enum OsStatus os_design_rho(const struct OsDesign *design, double *buf, size_t len);

/*
 # Safety
 `design` must be null or a handle from `os_design` not yet freed.
 */
void os_design_free(struct OsDesign *design);

/*
 Threshold policy of a designed test.

 # Safety
 `design` must be a live design handle; `out` must be writable.
 */
enum OsStatus os_design_policy(const struct OsDesign *design, struct OsPolicy **out);

/*
 Wald's classical thresholds for targets `(gamma0, gamma1)`.

 # Safety
 `out` must be writable.
 */
enum OsStatus os_policy_wald(double gamma0, double gamma1, struct OsPolicy **out);

/*
 Upper (`A`, decide H1) and lower (`B`, decide H0) thresholds in log-LR at
 statistic `theta`.

 # Safety
 `policy` must be a live policy handle; outputs must be writable.
 */
enum OsStatus os_policy_thresholds(const struct OsPolicy *policy,
                                   struct OsStatistic theta,
                                   double *upper,
                                   double *lower);

/*
 Decision at log-LR `s` and statistic `theta`: writes -1 to continue,
 0 for H0, 1 for H1.

 # Safety
 `policy` must be a live policy handle; `decision` must be writable.
 */
enum OsStatus os_policy_decide(const struct OsPolicy *policy,
                               double s,
                               struct OsStatistic theta,
                               int32_t *decision);

/*
 Runs `runs` Monte Carlo trials of `policy` with data drawn under H0
 (`truth` = 0) or H1 (`truth` = 1).

 # Safety
 `policy` and `model` must be live handles; `out` must be writable.
 */
enum OsStatus os_simulate(const struct OsPolicy *policy,
                          const struct OsModel *model,
                          int32_t truth,
                          uint64_t runs,
                          uint64_t seed,
                          struct OsSimulation *out);

/*
 # Safety
 `policy` must be null or a handle from this library not yet freed.
 */
void os_policy_free(struct OsPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTSEQ_H */
