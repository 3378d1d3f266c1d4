#ifndef TRT_ROM_H
#define TRT_ROM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Nonzero codes below 10 match the exit codes of the `trt`
 * command-line tool.
 */
typedef enum TrtStatus {
  TRT_STATUS_OK = 0,
  TRT_STATUS_CONFIG = 2,
  TRT_STATUS_CONVERGENCE = 3,
  TRT_STATUS_ARCHIVE_MISMATCH = 4,
  TRT_STATUS_IO = 5,
  TRT_STATUS_NULL_POINTER = 10,
  TRT_STATUS_INVALID_UTF8 = 11,
  TRT_STATUS_PANIC = 12,
  TRT_STATUS_OUT_OF_RANGE = 13,
} TrtStatus;

/**
 * POD basis archive.
 */
typedef struct TrtBasis TrtBasis;

/**
 * Run configuration handle.
 */
typedef struct TrtConfig TrtConfig;

/**
 * Time history of a full-order or reduced-order run.
 */
typedef struct TrtTrajectory TrtTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t trt_last_error_message(char *buf, size_t len);

/**
 * Fleck–Cummings configuration (`ci != 0` selects the small test setup).
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum TrtStatus trt_config_new(int32_t ci, struct TrtConfig **out);

/**
 * Reads a configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum TrtStatus trt_config_from_file(const char *path, struct TrtConfig **out);

/**
 * Sets one configuration key, using the configuration-file syntax. The
 * key `run_steps` limits the number of steps actually run.
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum TrtStatus trt_config_set(struct TrtConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void trt_config_free(struct TrtConfig *cfg);

/**
 * Runs the full-order model. When `out_dir` is non-null every step,
 * including intensities, is stored there for the offline stage.
 *
 * # Safety
 * `cfg` must be a live handle, `out_dir` null or a NUL-terminated string,
 * `out` a valid handle slot.
 */
enum TrtStatus trt_fom_run(const struct TrtConfig *cfg,
                           const char *out_dir,
                           struct TrtTrajectory **out);

/**
 * Builds a basis for tolerance `xi` from a stored full-order run.
 *
 * # Safety
 * `cfg` must be a live handle, `fom_dir` a NUL-terminated string, `out` a
 * valid handle slot.
 */
enum TrtStatus trt_offline(const struct TrtConfig *cfg,
                           const char *fom_dir,
                           double xi,
                           struct TrtBasis **out);

/**
 * # Safety
 * `basis` must be a live handle and `dir` a NUL-terminated string.
 */
enum TrtStatus trt_basis_write(const struct TrtBasis *basis, const char *dir);

/**
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum TrtStatus trt_basis_read(const char *dir, struct TrtBasis **out);

/**
 * Number of retained basis vectors, or 0 for a null handle.
 *
 * # Safety
 * `basis` must be null or a live handle.
 */
size_t trt_basis_rank(const struct TrtBasis *basis);

/**
 * # Safety
 * `basis` must be null or a handle not yet freed.
 */
void trt_basis_free(struct TrtBasis *basis);

/**
 * Runs the reduced-order model with `basis`.
 *
 * # Safety
 * `cfg` and `basis` must be live handles and `out` a valid handle slot.
 */
enum TrtStatus trt_rom_run(const struct TrtConfig *cfg,
                           const struct TrtBasis *basis,
                           struct TrtTrajectory **out);

/**
 * Number of records, the initial state included.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t trt_trajectory_len(const struct TrtTrajectory *traj);

/**
 * Number of spatial cells per record.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t trt_trajectory_cells(const struct TrtTrajectory *traj);

/**
 * Copies the cell temperatures [keV] of one record into `buf`.
 *
 * # Safety
 * `traj` must be a live handle and `buf` point to `len` writable doubles.
 */
enum TrtStatus trt_trajectory_temperature(const struct TrtTrajectory *traj,
                                          size_t record,
                                          double *buf,
                                          size_t len);

/**
 * Copies the cell radiation energy densities of one record into `buf`.
 *
 * # Safety
 * `traj` must be a live handle and `buf` point to `len` writable doubles.
 */
enum TrtStatus trt_trajectory_energy(const struct TrtTrajectory *traj,
                                     size_t record,
                                     double *buf,
                                     size_t len);

/**
 * Largest per-step relative 2-norm errors of temperature and energy
 * density of `test` against `reference`.
 *
 * # Safety
 * `cfg`, `reference` and `test` must be live handles; `err_t` and `err_e`
 * valid pointers.
 */
enum TrtStatus trt_compare(const struct TrtConfig *cfg,
                           const struct TrtTrajectory *reference,
                           const struct TrtTrajectory *test,
                           double *err_t,
                           double *err_e);

/**
 * # Safety
 * `traj` must be null or a handle not yet freed.
 */
void trt_trajectory_free(struct TrtTrajectory *traj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRT_ROM_H */
