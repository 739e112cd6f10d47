#ifndef ECS_MOTION_H
#define ECS_MOTION_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum EcsStatus {
  ECS_STATUS_OK = 0,
  // Bad argument, unsupported configuration or unreadable data.
  ECS_STATUS_INVALID_INPUT = 1,
  // Truncation, convergence or other numerical failure.
  ECS_STATUS_NUMERICAL = 2,
  ECS_STATUS_NULL_POINTER = 3,
  // Output buffer too small.
  ECS_STATUS_BUFFER_TOO_SMALL = 4,
  // A Rust panic was caught at the boundary.
  ECS_STATUS_INTERNAL = 5,
} EcsStatus;

// Result of a fit.
typedef struct EcsFitReport EcsFitReport;

// Single-ion two-mode model: SDF drive plus the X and Y modes.
typedef struct EcsModel EcsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *ecs_last_error(void);

// Library version, static storage.
const char *ecs_version(void);

// Build a model from the drive Rabi frequency, the detuning ratio
// delta_X/delta_Y and the mode splitting, all in kHz.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum EcsStatus ecs_model_new(double omega_khz,
                             double ratio,
                             double splitting_khz,
                             double eta_x,
                             double eta_y,
                             double p_x1,
                             double p_y1,
                             struct EcsModel **out);

// # Safety
// `model` must come from `ecs_model_new` and not be used afterwards. Null is ignored.
void ecs_model_free(struct EcsModel *model);

// Spin-up probability after an SDF pulse of `t_us`.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum EcsStatus ecs_model_spin_up(const struct EcsModel *model, double t_us, double *out);

// Y-mode phonon distribution of the heralded state after `t_us`, written to
// `out[0..=n_max]`; `out_len` must be at least `n_max + 1`.
//
// # Safety
// `model` must be a live handle and `out` must hold `out_len` doubles.
enum EcsStatus ecs_model_distribution(const struct EcsModel *model,
                                      double t_us,
                                      size_t n_max,
                                      double *out,
                                      size_t out_len);

// Y-mode parity of the heralded state after `t_us`.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum EcsStatus ecs_model_parity(const struct EcsModel *model, double t_us, double *out);

// Two-ion gate populations `[p_dd, p_du + p_ud, p_uu]` at `t_us` for the
// built-in chain at detuning ratio `ratio`. A non-positive `omega_khz`
// selects the Rabi frequency that gives a Bell state at 182 µs.
//
// # Safety
// `out3` must hold three doubles.
enum EcsStatus ecs_ms_populations(double ratio, double omega_khz, double t_us, double *out3);

// `(even_population + parity_amplitude) / 2`.
//
// # Safety
// `out` must be writable.
enum EcsStatus ecs_bell_fidelity(double even_population, double parity_amplitude, double *out);

// Fit a blue-sideband trace with default settings and `n_max` levels.
// `omega0_khz <= 0` keeps the default nominal Rabi frequency.
//
// # Safety
// `times_us`, `p_up` and `shots` must each hold `len` values; `out` must be writable.
enum EcsStatus ecs_fit_bsb(const double *times_us,
                           const double *p_up,
                           const uint32_t *shots,
                           size_t len,
                           size_t n_max,
                           double omega0_khz,
                           struct EcsFitReport **out);

// # Safety
// `report` must come from a fit call and not be used afterwards. Null is ignored.
void ecs_fit_report_free(struct EcsFitReport *report);

// 1 if the fit converged, 0 if not, -1 for a null handle.
//
// # Safety
// `report` must be a live handle or null.
int32_t ecs_fit_report_converged(const struct EcsFitReport *report);

// Value and standard error of a named parameter such as `p_0` or `omega0_khz`.
// `std_error` may be null.
//
// # Safety
// `report` must be a live handle, `key` a NUL-terminated string, `value` writable.
enum EcsStatus ecs_fit_report_get(const struct EcsFitReport *report,
                                  const char *key,
                                  double *value,
                                  double *std_error);

// The report as a TOML document; release with `ecs_string_free`. Null on failure.
//
// # Safety
// `report` must be a live handle.
char *ecs_fit_report_to_toml(const struct EcsFitReport *report);

// # Safety
// `s` must come from this library and not be used afterwards. Null is ignored.
void ecs_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECS_MOTION_H */
