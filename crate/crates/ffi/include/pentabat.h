/* Copyright 2026 Pentabat Contributors */
/* SPDX-License-Identifier: Apache-2.0 */

#ifndef PENTABAT_H
#define PENTABAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>

// Number of reals per trajectory sample, excluding time.
#define PB_STATE_DIM 18

// Result code of every fallible call.
typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_NULL_POINTER = 1,
  PB_STATUS_INVALID_ARGUMENT = 2,
  PB_STATUS_INVALID_MODEL = 3,
  PB_STATUS_INTEGRATION = 4,
  PB_STATUS_METRICS = 5,
  PB_STATUS_DIMENSION_CAP = 6,
  PB_STATUS_IO = 7,
  PB_STATUS_PANIC = 8,
} PbStatus;

// Model parameters.
typedef struct PbModel PbModel;

// A sampled cumulant trajectory.
typedef struct PbTrajectory PbTrajectory;

// Battery figures of merit. Fields that do not apply are NaN.
typedef struct PbMetrics {
  double e_max;
  double t_max;
  double p_max;
  double tau_max;
  double e_min;
  double t_min;
  double work_w;
  double p_w;
  double eta;
  double tau_s;
  double n_ph_peak;
  double latency;
} PbMetrics;

// `y = prefactor * x^exponent`.
typedef struct PbFit {
  double exponent;
  double prefactor;
  double r_squared;
  double window_lo;
  double window_hi;
  size_t points;
} PbFit;

// Outcome of comparing the cumulant solver with the exact solver.
typedef struct PbOracleReport {
  double worst_deviation;
  double tolerance;
  bool pass;
} PbOracleReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or an empty
// string. Valid until the next pentabat call on the same thread.
const char *pb_last_error_message(void);

// Library version, a static NUL-terminated string.
const char *pb_version(void);

// Baseline model parameters.
//
// # Safety
// `out` must be a valid pointer.
enum PbStatus pb_model_default(struct PbModel **out);

// Parameters from a JSON object; missing keys take baseline values.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum PbStatus pb_model_from_json(const char *json, struct PbModel **out);

// # Safety
// `model` must come from this library and not be used afterwards.
void pb_model_free(struct PbModel *model);

// Sets a numeric parameter by name; `"q"` sets the quality factor.
//
// # Safety
// `model` must be a live handle and `name` a NUL-terminated string.
enum PbStatus pb_model_set(struct PbModel *model, const char *name, double value);

// # Safety
// `model` must be a live handle, `name` a NUL-terminated string and `out`
// a valid pointer.
enum PbStatus pb_model_get(const struct PbModel *model, const char *name, double *out);

// Checks every parameter invariant.
//
// # Safety
// `model` must be a live handle.
enum PbStatus pb_model_validate(const struct PbModel *model);

// Integrates from the ground state over `[0, t_end]` sampled at `points`
// equally spaced times. `charge_stop` is the pump switch-off time, NaN for
// continuous pumping.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum PbStatus pb_simulate(const struct PbModel *model,
                          double t_end,
                          size_t points,
                          bool load_coupled,
                          double charge_stop,
                          struct PbTrajectory **out);

// # Safety
// `traj` must come from this library and not be used afterwards.
void pb_trajectory_free(struct PbTrajectory *traj);

// Number of samples, or 0 for NULL.
//
// # Safety
// `traj` must be NULL or a live handle.
size_t pb_trajectory_len(const struct PbTrajectory *traj);

// Sample `index`: its time and the `PB_STATE_DIM` reals p1..p5, n_ph, then
// real and imaginary parts of c35, s_coll, m35, m45, m34, alpha.
//
// # Safety
// `traj` must be a live handle, `t` a valid pointer and `state` point to
// `PB_STATE_DIM` writable doubles.
enum PbStatus pb_trajectory_point(const struct PbTrajectory *traj,
                                  size_t index,
                                  double *t,
                                  double *state);

// Writes the trajectory in the command-line CSV format.
//
// # Safety
// `traj` must be a live handle and `path` a NUL-terminated string.
enum PbStatus pb_trajectory_write_csv(const struct PbTrajectory *traj, const char *path);

// Figures of merit of a trajectory produced with the same `load_coupled`
// and `charge_stop` settings. A missing post-maximum minimum leaves the
// work fields NaN instead of failing.
//
// # Safety
// `traj` and `model` must be live handles and `out` a valid pointer.
enum PbStatus pb_metrics(const struct PbTrajectory *traj,
                         const struct PbModel *model,
                         bool load_coupled,
                         double charge_stop,
                         struct PbMetrics *out);

// Bose-Einstein occupation at angular frequency `omega` (rad/s) and
// temperature (K).
double pb_thermal_photons(double omega, double temperature);

// # Safety
// `out` must be a valid pointer.
enum PbStatus pb_kappa_from_q(double omega_m, double q, double *out);

// Least-squares power law through `n` points in log-log space.
//
// # Safety
// `x` and `y` must point to `n` doubles and `out` be a valid pointer.
enum PbStatus pb_fit_power_law(const double *x, const double *y, size_t n, struct PbFit *out);

// Runs the exact and cumulant solvers on `model` reduced to `n_molecules`
// molecules with photon cutoff `fock_cutoff`, over ten triplet lifetimes.
// `tolerance` NaN selects 5 % without drive and 10 % with one. A mismatch
// is reported through `out->pass`, not the status.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum PbStatus pb_oracle_check(const struct PbModel *model,
                              size_t n_molecules,
                              size_t fock_cutoff,
                              double tolerance,
                              struct PbOracleReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PENTABAT_H */
