#ifndef INCRESTAB_H
#define INCRESTAB_H

/* Generated from the increstab-capi crate by cbindgen; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum IncrestabStatus {
  INCRESTAB_STATUS_OK = 0,
  // A required pointer argument was null.
  INCRESTAB_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  INCRESTAB_STATUS_UTF8 = 2,
  INCRESTAB_STATUS_INVALID_ARGUMENT = 3,
  INCRESTAB_STATUS_DIMENSION_MISMATCH = 4,
  // A matrix failed a symmetry or positive-definiteness requirement.
  INCRESTAB_STATUS_NUMERIC = 5,
  // An integration left the trusted range.
  INCRESTAB_STATUS_DIVERGENCE = 6,
  INCRESTAB_STATUS_UNSUPPORTED = 7,
  INCRESTAB_STATUS_CONFIG = 8,
  INCRESTAB_STATUS_MISSING_ARTIFACT = 9,
  INCRESTAB_STATUS_CORRUPT_FILE = 10,
  INCRESTAB_STATUS_REPLAY_FAILED = 11,
  INCRESTAB_STATUS_IO = 12,
  // The queried product state is not in the winning set.
  INCRESTAB_STATUS_NOT_WINNING = 13,
  // An internal panic was caught at the boundary.
  INCRESTAB_STATUS_PANIC = 14,
} IncrestabStatus;

// A finite abstraction of a sampled closed loop.
typedef struct IncrestabAbstraction IncrestabAbstraction;

// A winning strategy for a scheduled reach-avoid-stay game.
typedef struct IncrestabController IncrestabController;

// A loaded example system with its synthesized closed loops.
typedef struct IncrestabSystem IncrestabSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the message of the most recent failure on this thread into `buf`
// (NUL-terminated, truncated to `cap` bytes) and returns the full message
// length in bytes, excluding the terminator. With a null or empty buffer,
// just returns the length.
//
// # Safety
// `buf` must be null or point to at least `cap` writable bytes.
size_t increstab_last_error(char *buf, size_t cap);

// Static description of a status code.
const char *increstab_status_name(enum IncrestabStatus status);

// Minimal synthesis gain composing a certificate with rates
// `(kappa, kappa_hat)` through one integrator layer.
double increstab_required_gain(double kappa, double kappa_hat);

// Gain a metric with rates `(lambda_hat, alpha)` must strictly exceed for
// the block extension to contract.
double increstab_required_gain_contraction(double lambda_hat, double alpha);

// Opens a built-in system by name (`"sat-cascade"`).
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be a valid location to
// store the handle. On `Ok` the caller owns the handle and must release it
// with [`increstab_system_free`].
enum IncrestabStatus increstab_system_open(const char *name, struct IncrestabSystem **out);

// Releases a system handle. Null is ignored.
//
// # Safety
// `sys` must be a handle from [`increstab_system_open`] not yet freed.
void increstab_system_free(struct IncrestabSystem *sys);

// State dimension of the system's closed loop; 0 on a null handle.
//
// # Safety
// `sys` must be a live system handle or null.
size_t increstab_system_state_dim(const struct IncrestabSystem *sys);

// Input dimension of the system's closed loop; 0 on a null handle.
//
// # Safety
// `sys` must be a live system handle or null.
size_t increstab_system_input_dim(const struct IncrestabSystem *sys);

// Stock synthesis gain of the system; NaN on a null handle.
//
// # Safety
// `sys` must be a live system handle or null.
double increstab_system_default_gain(const struct IncrestabSystem *sys);

// Integrates the closed loop from `x0` under a constant synthetic input for
// `horizon` time units at fixed `step`, writing the endpoint into
// `out_state`.
//
// # Safety
// `x0` and `out_state` must point to `state_dim` doubles, `input` to
// `input_dim` doubles.
enum IncrestabStatus increstab_closed_loop_endpoint(const struct IncrestabSystem *sys,
                                                    const double *x0,
                                                    const double *input,
                                                    double horizon,
                                                    double step,
                                                    double *out_state);

// Runs the system's full certificate battery (sandwich and decay of both
// incremental forms, both metric conditions) with `samples` points per
// check over the stock boxes. Writes the overall pass flag and the worst
// defect seen across every check.
//
// # Safety
// `out_pass` and `out_max_defect` must be valid locations.
enum IncrestabStatus increstab_verify_certificates(const struct IncrestabSystem *sys,
                                                   size_t samples,
                                                   double tolerance,
                                                   uint64_t seed,
                                                   bool *out_pass,
                                                   double *out_max_defect);

// Quantizes the closed loop: state grid of pitch `eta` covering the domain
// box, input grid of pitch `mu` covering the input box, sampled every `tau`
// with internal integration step `inner_step`.
//
// # Safety
// `domain_lo`/`domain_hi` must hold `state_dim` doubles and
// `input_lo`/`input_hi` `input_dim` doubles; `out` must be a valid
// location. On `Ok` the caller owns the handle and must release it with
// [`increstab_abstraction_free`].
enum IncrestabStatus increstab_abstraction_build(const struct IncrestabSystem *sys,
                                                 const double *domain_lo,
                                                 const double *domain_hi,
                                                 double eta,
                                                 const double *input_lo,
                                                 const double *input_hi,
                                                 double mu,
                                                 double tau,
                                                 double inner_step,
                                                 struct IncrestabAbstraction **out);

// Loads an abstraction from its binary artifact.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid location. On `Ok`
// the caller owns the handle.
enum IncrestabStatus increstab_abstraction_load(const char *path,
                                                struct IncrestabAbstraction **out);

// Stores an abstraction as a binary artifact plus JSON sidecar.
//
// # Safety
// `abs` must be a live abstraction handle, `path` a NUL-terminated string.
enum IncrestabStatus increstab_abstraction_save(const struct IncrestabAbstraction *abs,
                                                const char *path);

// Releases an abstraction handle. Null is ignored.
//
// # Safety
// `abs` must be a handle not yet freed.
void increstab_abstraction_free(struct IncrestabAbstraction *abs);

// Number of grid states; 0 on a null handle.
//
// # Safety
// `abs` must be a live abstraction handle or null.
size_t increstab_abstraction_n_states(const struct IncrestabAbstraction *abs);

// Number of grid inputs; 0 on a null handle.
//
// # Safety
// `abs` must be a live abstraction handle or null.
size_t increstab_abstraction_n_inputs(const struct IncrestabAbstraction *abs);

// Number of blocked transitions; 0 on a null handle.
//
// # Safety
// `abs` must be a live abstraction handle or null.
uint64_t increstab_abstraction_blocked_count(const struct IncrestabAbstraction *abs);

// Writes the successor of `(state, input)` into `out_successor`, or
// `UINT64_MAX` when the transition is blocked.
//
// # Safety
// `abs` must be a live abstraction handle, `out_successor` a valid
// location.
enum IncrestabStatus increstab_abstraction_successor(const struct IncrestabAbstraction *abs,
                                                     size_t state,
                                                     size_t input,
                                                     uint64_t *out_successor);

// Writes the grid-center coordinates of a state into `out`.
//
// # Safety
// `out` must point to `state_dim` doubles.
enum IncrestabStatus increstab_abstraction_state_center(const struct IncrestabAbstraction *abs,
                                                        size_t state,
                                                        double *out);

// Compares continuous and abstract runs over random input words: `runs`
// runs of `steps` sampling periods each, from uniform starts in the domain
// box, against deviation budget `epsilon`.
//
// # Safety
// Box pointers must hold `state_dim` doubles each; `out_pass` and
// `out_max_deviation` must be valid locations.
enum IncrestabStatus increstab_check_epsilon(const struct IncrestabSystem *sys,
                                             const struct IncrestabAbstraction *abs,
                                             const double *domain_lo,
                                             const double *domain_hi,
                                             double epsilon,
                                             size_t runs,
                                             size_t steps,
                                             double inner_step,
                                             uint64_t seed,
                                             bool *out_pass,
                                             double *out_max_deviation);

// Solves the reach-avoid-stay game on the abstraction under a scheduler
// cycle (`'a'` actuate / `'u'` hold, starting at phase `initial`).
// Obstacles are packed flat: for each box, `state_dim` lows then
// `state_dim` highs; the pointer may be null when `n_obstacles` is 0.
//
// # Safety
// Pointer arguments must obey the layouts above; `out` must be a valid
// location. On `Ok` the caller owns the handle and must release it with
// [`increstab_controller_free`].
enum IncrestabStatus increstab_synthesize(const struct IncrestabAbstraction *abs,
                                          const char *cycle,
                                          size_t initial,
                                          const double *target_lo,
                                          const double *target_hi,
                                          const double *obstacles,
                                          size_t n_obstacles,
                                          struct IncrestabController **out);

// Releases a controller handle. Null is ignored.
//
// # Safety
// `ctrl` must be a handle not yet freed.
void increstab_controller_free(struct IncrestabController *ctrl);

// Number of winning product states; 0 on a null handle.
//
// # Safety
// `ctrl` must be a live controller handle or null.
size_t increstab_controller_n_winning(const struct IncrestabController *ctrl);

// Longest distance-to-core over the winning set, in slots; 0 on a null
// handle.
//
// # Safety
// `ctrl` must be a live controller handle or null.
uint32_t increstab_controller_max_depth(const struct IncrestabController *ctrl);

// Looks up the strategy at `(state, phase)`: on `Ok` writes the grid input
// index and the distance-to-core; `NotWinning` when the product state is
// losing.
//
// # Safety
// `out_input` and `out_depth` must be valid locations.
enum IncrestabStatus increstab_controller_entry(const struct IncrestabController *ctrl,
                                                size_t state,
                                                size_t phase,
                                                size_t *out_input,
                                                uint32_t *out_depth);

// Writes the controller table as CSV next to the abstraction it was solved
// on.
//
// # Safety
// `ctrl` and `abs` must be live handles; `path` a NUL-terminated string.
enum IncrestabStatus increstab_controller_save_csv(const struct IncrestabController *ctrl,
                                                   const struct IncrestabAbstraction *abs,
                                                   const char *path);

// Replays a controller against the continuous closed loop for `n_slots`
// sampling periods from `x0`. Writes the slot at which the run first
// entered the target (`-1` if never), the number of trailing slots inside,
// and the final continuous state.
//
// # Safety
// `x0` and `out_final_state` must point to `state_dim` doubles; region
// pointers follow the layout of [`increstab_synthesize`]; the remaining out
// pointers must be valid locations.
enum IncrestabStatus increstab_replay(const struct IncrestabSystem *sys,
                                      const struct IncrestabAbstraction *abs,
                                      const struct IncrestabController *ctrl,
                                      const double *target_lo,
                                      const double *target_hi,
                                      const double *obstacles,
                                      size_t n_obstacles,
                                      const double *domain_lo,
                                      const double *domain_hi,
                                      const double *x0,
                                      size_t n_slots,
                                      double inner_step,
                                      int64_t *out_entered_at,
                                      size_t *out_target_tail,
                                      double *out_final_state);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INCRESTAB_H */
