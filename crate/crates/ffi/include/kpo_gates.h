#ifndef KPO_GATES_H
#define KPO_GATES_H

/* This file is generated by cbindgen from kpo-gates-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Choice of the second (counter) drive accompanying the gate drive.
 */
typedef enum KpoCounter {
  /**
   * No counter drive.
   */
  KPO_COUNTER_NONE = 0,
  /**
   * The gate's matching counteradiabatic form.
   */
  KPO_COUNTER_STANDARD = 1,
  /**
   * Deliberately mismatched beam-splitter counter (two-mode gates only).
   */
  KPO_COUNTER_BEAM_SPLITTER_ORTHOGONAL = 2,
} KpoCounter;

/**
 * Gate generators selectable through the ABI.
 */
typedef enum KpoGate {
  /**
   * Single-mode Z rotation, drive `a† + a`.
   */
  KPO_GATE_RZ = 0,
  /**
   * Single-mode X rotation, drive `a†a`.
   */
  KPO_GATE_RX = 1,
  /**
   * Two-mode ZZ rotation by two-mode squeezing, `a1†a2† + a1a2`.
   */
  KPO_GATE_RZZ_TWO_MODE_SQUEEZING = 2,
  /**
   * Two-mode ZZ rotation by a beam splitter, `a1†a2 + a2†a1`.
   */
  KPO_GATE_RZZ_BEAM_SPLITTER = 3,
} KpoGate;

/**
 * Status code returned by every fallible function of this library.
 */
typedef enum KpoStatus {
  /**
   * The call succeeded.
   */
  KPO_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  KPO_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of range or inconsistent (see `kpo_last_error`).
   */
  KPO_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A numerical procedure failed (non-finite values, failed calibration,
   * or a step-size check).
   */
  KPO_STATUS_NUMERICAL = 3,
  /**
   * A string argument was not valid UTF-8 or not valid JSON.
   */
  KPO_STATUS_JSON = 4,
  /**
   * An internal panic was caught at the boundary; state may be stale but
   * the process is intact.
   */
  KPO_STATUS_PANIC = 5,
} KpoStatus;

/**
 * Opaque handle to a gate problem (operators, ideal unitary, constants).
 */
typedef struct KpoProblem KpoProblem;

/**
 * Opaque handle to a waveform pair `(g0(t), g1(t))`.
 */
typedef struct KpoWaveform KpoWaveform;

/**
 * Average-fidelity scores of a propagated gate.
 */
typedef struct KpoFidelity {
  /**
   * Average gate fidelity over uniformly distributed qubit states.
   */
  double fbar;
  /**
   * `1 - fbar`.
   */
  double infidelity;
  /**
   * `1 - tr(UU†)/d`: population lost from the encoded subspace.
   */
  double leakage;
} KpoFidelity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the library as a static C string.
 */
const char *kpo_version(void);

/**
 * Message of the last error raised on the calling thread, or null when the
 * last call succeeded. The pointer stays valid until the thread's next
 * failing call into this library.
 */
const char *kpo_last_error(void);

/**
 * Creates a gate problem: the KPO Hamiltonian on a Fock space truncated at
 * `cutoff` photons per mode, the drive pair of `gate`/`counter`, and the
 * ideal target unitary for `angle`. `k` and `p` are the Kerr coefficient
 * and pump amplitude; the cat size is `alpha² = p/k`.
 *
 * On success writes a handle to `*out` which must be released with
 * [`kpo_problem_free`].
 *
 * # Safety
 * `out` must point to writable memory for one pointer.
 */
enum KpoStatus kpo_problem_new(enum KpoGate gate,
                               enum KpoCounter counter,
                               double angle,
                               double k,
                               double p,
                               uint32_t cutoff,
                               struct KpoProblem **out);

/**
 * Releases a problem handle. Passing null is a no-op.
 *
 * # Safety
 * `problem` must be a pointer returned by [`kpo_problem_new`] that has not
 * been freed already.
 */
void kpo_problem_free(struct KpoProblem *problem);

/**
 * Creates the closed-form waveform pair of `gate` at gate time `t_total`
 * (in units of `1/K`). `delta` may be null except for `Rx`, whose pulse
 * needs a detuning; `with_counter` selects whether `g1` is the matching
 * counter pulse or identically zero.
 *
 * On success writes a handle to `*out` which must be released with
 * [`kpo_waveform_free`].
 *
 * # Safety
 * `out` must point to writable memory for one pointer; `delta`, when
 * non-null, must point to a readable `double`.
 */
enum KpoStatus kpo_waveform_analytic(enum KpoGate gate,
                                     double angle,
                                     const double *delta,
                                     double t_total,
                                     bool with_counter,
                                     double k,
                                     double p,
                                     struct KpoWaveform **out);

/**
 * Loads a waveform from the JSON text of a pulse file written by the
 * `kpo-gates optimize` command (the `gate`/`counter`/`meta` provenance
 * fields are ignored here; only the coefficients are used).
 *
 * # Safety
 * `json` must be a null-terminated string; `out` must point to writable
 * memory for one pointer.
 */
enum KpoStatus kpo_waveform_from_pulse_json(const char *json, struct KpoWaveform **out);

/**
 * Writes the waveform's total duration (units of `1/K`) to `*out`.
 *
 * # Safety
 * `waveform` must be a live waveform handle; `out` must be writable.
 */
enum KpoStatus kpo_waveform_duration(const struct KpoWaveform *waveform, double *out);

/**
 * Evaluates the waveform at time `t ∈ [0, duration]`, writing the gate
 * amplitude to `*out_g0` and the counter amplitude to `*out_g1`.
 *
 * # Safety
 * `waveform` must be a live waveform handle; both out-pointers must be
 * writable.
 */
enum KpoStatus kpo_waveform_eval(const struct KpoWaveform *waveform,
                                 double t,
                                 double *out_g0,
                                 double *out_g1);

/**
 * Releases a waveform handle. Passing null is a no-op.
 *
 * # Safety
 * `waveform` must be a pointer returned by this library that has not been
 * freed already.
 */
void kpo_waveform_free(struct KpoWaveform *waveform);

/**
 * Propagates the gate of `problem` under `waveform` with step `dt` and
 * writes its average-fidelity scores to `*out`.
 *
 * # Safety
 * `problem` and `waveform` must be live handles; `out` must be writable.
 */
enum KpoStatus kpo_gate_fidelity(const struct KpoProblem *problem,
                                 const struct KpoWaveform *waveform,
                                 double dt,
                                 struct KpoFidelity *out);

/**
 * Propagates the gate with single-photon loss at rate `kappa` (units of
 * `K`) via the Lindblad master equation and writes the average fidelity
 * over qubit states to `*out_fbar`.
 *
 * # Safety
 * `problem` and `waveform` must be live handles; `out_fbar` must be
 * writable.
 */
enum KpoStatus kpo_average_fidelity_loss(const struct KpoProblem *problem,
                                         const struct KpoWaveform *waveform,
                                         double kappa,
                                         double dt,
                                         double *out_fbar);

/**
 * Small-loss estimate of the average infidelity accumulated by `n_kpo`
 * idling cat qubits of size `alpha` over time `t` at loss rate `kappa`.
 */
double kpo_loss_infidelity_estimate(double alpha, double kappa, double t, uint32_t n_kpo);

/**
 * Optimizes the Fourier pulse of `problem`'s gate at gate time `t_total`
 * (units of `1/K`). `delta` may be null (for `Rx`, the seed detuning is
 * then calibrated automatically). `options_json`, when non-null, is a JSON
 * object overriding optimizer defaults field by field, e.g.
 * `{"restarts": 0, "bfgs": {"max_iterations": 50}}`.
 *
 * On success writes the optimized waveform to `*out_waveform` (release
 * with [`kpo_waveform_free`]) and, when `out_report` is non-null, the
 * full-resolution fidelity scores to `*out_report`.
 *
 * # Safety
 * `problem` must be a live handle; `options_json`, when non-null, must be
 * a null-terminated string; `delta`, when non-null, must be readable;
 * `out_waveform` must be writable.
 */
enum KpoStatus kpo_optimize_gate(const struct KpoProblem *problem,
                                 double t_total,
                                 const double *delta,
                                 const char *options_json,
                                 struct KpoWaveform **out_waveform,
                                 struct KpoFidelity *out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KPO_GATES_H */
