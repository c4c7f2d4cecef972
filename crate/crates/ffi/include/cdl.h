#ifndef CDL_H
#define CDL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum CdlStatus {
  CDL_STATUS_OK = 0,
  // Null pointer, bad UTF-8 or a buffer of the wrong size.
  CDL_STATUS_INVALID_ARGUMENT = 1,
  CDL_STATUS_INVALID_GRID = 2,
  CDL_STATUS_GRID_MISMATCH = 3,
  CDL_STATUS_INVALID_PROBLEM = 4,
  CDL_STATUS_CONFIG = 5,
  // Blow-up or non-finite values during a solve.
  CDL_STATUS_NUMERICAL = 6,
  CDL_STATUS_IO = 7,
  // The run completed but at least one check failed.
  CDL_STATUS_CHECK_FAILED = 8,
  CDL_STATUS_PANIC = 9,
} CdlStatus;

typedef enum CdlNorm {
  CDL_NORM_L1 = 0,
  CDL_NORM_L2 = 1,
  CDL_NORM_LINF = 2,
  CDL_NORM_H1 = 3,
  CDL_NORM_HMINUS1 = 4,
} CdlNorm;

typedef struct CdlField CdlField;

typedef struct CdlGrid CdlGrid;

typedef struct CdlTrajectory CdlTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length including the NUL,
// or 0 when there is no error. Passing a null `buf` only queries the length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t cdl_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *cdl_version(void);

// # Safety
// `out` must be a valid pointer to a handle slot.
enum CdlStatus cdl_grid_new(size_t dim,
                            size_t n,
                            double t_final,
                            size_t steps,
                            struct CdlGrid **out);

// Grid with the fewest time steps the CFL bound admits for `mu_sup`.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum CdlStatus cdl_grid_new_cfl(size_t dim,
                                size_t n,
                                double t_final,
                                double mu_sup,
                                struct CdlGrid **out);

// # Safety
// `grid` must be null or a handle from `cdl_grid_new*` not yet freed.
void cdl_grid_free(struct CdlGrid *grid);

// Number of cells, 0 for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
size_t cdl_grid_len(const struct CdlGrid *grid);

// # Safety
// `grid` must be null or a live handle.
size_t cdl_grid_steps(const struct CdlGrid *grid);

// # Safety
// `grid` must be null or a live handle.
double cdl_grid_tau(const struct CdlGrid *grid);

// Copies `len` row-major values into a new field; `len` must equal the
// grid's cell count.
//
// # Safety
// `grid` must be a live handle, `values` must point to `len` doubles and
// `out` to a handle slot.
enum CdlStatus cdl_field_new(const struct CdlGrid *grid,
                             const double *values,
                             size_t len,
                             struct CdlField **out);

// # Safety
// `field` must be null or a live handle.
void cdl_field_free(struct CdlField *field);

// Copies the field values into `out` (`len` must equal the cell count).
//
// # Safety
// `field` must be a live handle and `out` must point to `len` doubles.
enum CdlStatus cdl_field_values(const struct CdlField *field, double *out, size_t len);

// # Safety
// `field` must be a live handle and `out` a valid pointer.
enum CdlStatus cdl_field_norm(const struct CdlField *field, enum CdlNorm kind, double *out);

// # Safety
// `traj` must be null or a live handle.
void cdl_trajectory_free(struct CdlTrajectory *traj);

// Number of time levels (steps + 1), 0 for a null handle.
//
// # Safety
// `traj` must be null or a live handle.
size_t cdl_trajectory_len(const struct CdlTrajectory *traj);

// Copies time level `k` into `out` (`len` must equal the cell count).
//
// # Safety
// `traj` must be a live handle and `out` must point to `len` doubles.
enum CdlStatus cdl_trajectory_slice(const struct CdlTrajectory *traj,
                                    size_t k,
                                    double *out,
                                    size_t len);

// Forward solve of `dz/dt - Lap(mu z) = g` with time-independent `mu` and
// `g` (`g` may be null for zero). The time grid is the one `mu` was built on.
//
// # Safety
// `mu`, `z0` must be live handles, `g` null or live, `out` a handle slot.
enum CdlStatus cdl_solve_forward(const struct CdlField *mu,
                                 const struct CdlField *z0,
                                 const struct CdlField *g,
                                 struct CdlTrajectory **out);

// Backward solve of `dPhi/dt + mu Lap(Phi) = s`, `Phi(T) = 0`.
//
// # Safety
// `mu`, `s` must be live handles and `out` a handle slot.
enum CdlStatus cdl_solve_dual(const struct CdlField *mu,
                              const struct CdlField *s,
                              struct CdlTrajectory **out);

// Relative defect of the discrete duality identity for the forward problem
// `(mu, z0, g)` and the dual source `s`.
//
// # Safety
// `mu`, `z0`, `s` must be live handles, `g` null or live, `out` valid.
enum CdlStatus cdl_duality_residual(const struct CdlField *mu,
                                    const struct CdlField *z0,
                                    const struct CdlField *g,
                                    const struct CdlField *s,
                                    double *out);

// Runs a JSON run config. On `Ok` or `CheckFailed`, `*manifest_json` holds
// the run manifest, to be released with `cdl_string_free`.
//
// # Safety
// `config_json` must be a NUL-terminated string and `manifest_json` a valid
// pointer.
enum CdlStatus cdl_run_config(const char *config_json, char **manifest_json);

// # Safety
// `s` must be null or a string returned by this library.
void cdl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CDL_H */
