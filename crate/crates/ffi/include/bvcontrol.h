#ifndef BVCONTROL_H
#define BVCONTROL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BvcStatus {
  BVC_STATUS_OK = 0,
  BVC_STATUS_NULL_POINTER = 1,
  BVC_STATUS_INVALID_ARGUMENT = 2,
  BVC_STATUS_CONFIG = 3,
  /**
   * The homotopy stopped before its last stage; partial results exist.
   */
  BVC_STATUS_NONCONVERGED = 4,
  BVC_STATUS_SOLVER = 5,
  BVC_STATUS_IO = 6,
  BVC_STATUS_BUFFER_TOO_SMALL = 7,
  BVC_STATUS_PANIC = 8,
} BvcStatus;

/**
 * A parsed run configuration.
 */
typedef struct BvcConfig BvcConfig;

/**
 * A finished solve together with the problem it solved.
 */
typedef struct BvcSolution BvcSolution;

/**
 * Final objective values of a solve.
 */
typedef struct BvcObjective {
  double j;
  double f;
  double tv;
  double final_eps;
  double final_delta;
  size_t stages;
  bool converged;
} BvcObjective;

/**
 * First-order certificate summary.
 */
typedef struct BvcCertificate {
  double residual;
  double residual_relative;
  double dual_overshoot;
  double pairing_gap;
  double saturation_fraction;
  double theta;
} BvcCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *bvc_last_error(void);

/**
 * Static, NUL-terminated version string.
 */
const char *bvc_version(void);

/**
 * Reads a configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BvcStatus bvc_config_from_file(const char *path, struct BvcConfig **out);

/**
 * Parses configuration text. Relative target file paths resolve against
 * the working directory.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum BvcStatus bvc_config_from_str(const char *text, struct BvcConfig **out);

/**
 * Overrides the RNG seed.
 *
 * # Safety
 * `cfg` must come from this library and not be freed.
 */
enum BvcStatus bvc_config_set_seed(struct BvcConfig *cfg, uint64_t seed);

/**
 * Overrides the output directory used by [`bvc_run`].
 *
 * # Safety
 * `cfg` must come from this library; `dir` must be a NUL-terminated string.
 */
enum BvcStatus bvc_config_set_out(struct BvcConfig *cfg, const char *dir);

/**
 * # Safety
 * `cfg` must be null or come from this library, and is invalid afterwards.
 */
void bvc_config_free(struct BvcConfig *cfg);

/**
 * Runs the configured mode and writes its files, like the command line.
 *
 * # Safety
 * `cfg` must come from this library and not be freed.
 */
enum BvcStatus bvc_run(const struct BvcConfig *cfg);

/**
 * Solves the configured problem in memory. On [`BvcStatus::Nonconverged`]
 * `out` still receives the partial solution.
 *
 * # Safety
 * `cfg` must come from this library; `out` must be writable.
 */
enum BvcStatus bvc_solve(const struct BvcConfig *cfg, struct BvcSolution **out);

/**
 * # Safety
 * `sol` must be null or come from this library, and is invalid afterwards.
 */
void bvc_solution_free(struct BvcSolution *sol);

/**
 * Number of control cells, i.e. the length [`bvc_solution_control`] needs.
 *
 * # Safety
 * `sol` must be null or come from this library.
 */
size_t bvc_solution_len(const struct BvcSolution *sol);

/**
 * Control cells along x, then along y.
 *
 * # Safety
 * `sol` must come from this library; `nx` and `ny` must be writable.
 */
enum BvcStatus bvc_solution_shape(const struct BvcSolution *sol, size_t *nx, size_t *ny);

/**
 * Copies the control, x fastest, into `buf[0..len]`.
 *
 * # Safety
 * `sol` must come from this library; `buf` must hold `len` doubles.
 */
enum BvcStatus bvc_solution_control(const struct BvcSolution *sol, double *buf, size_t len);

/**
 * # Safety
 * `sol` must come from this library; `out` must be writable.
 */
enum BvcStatus bvc_solution_objective(const struct BvcSolution *sol, struct BvcObjective *out);

/**
 * First-order certificate of the solution; `theta <= 0` selects the
 * default activity threshold.
 *
 * # Safety
 * `sol` must come from this library; `out` must be writable.
 */
enum BvcStatus bvc_solution_certificate(const struct BvcSolution *sol,
                                        double theta,
                                        struct BvcCertificate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BVCONTROL_H */
