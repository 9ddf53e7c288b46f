#ifndef PSHE_H
#define PSHE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsheStatus {
  PSHE_STATUS_OK = 0,
  PSHE_STATUS_NULL_POINTER = 1,
  PSHE_STATUS_INVALID_ARGUMENT = 2,
  PSHE_STATUS_INADMISSIBLE = 3,
  PSHE_STATUS_NUMERICAL = 4,
  PSHE_STATUS_IO = 5,
  PSHE_STATUS_BUFFER_TOO_SMALL = 6,
  PSHE_STATUS_PANIC = 7,
} PsheStatus;

typedef enum PsheBackend {
  PSHE_BACKEND_GRAM = 0,
  PSHE_BACKEND_FIELD = 1,
} PsheBackend;

/*
 A computed constants table.
 */
typedef struct PsheConstants PsheConstants;

/*
 Mollifier and covariance kernel for one dimension.
 */
typedef struct PsheKernels PsheKernels;

/*
 A validated polymer configuration bound to its kernels.
 */
typedef struct PshePolymer PshePolymer;

/*
 An acceptance suite; constants are computed on first use and cached.
 */
typedef struct PsheSuite PsheSuite;

/*
 Monte Carlo budget of the constants; zero fields take the library defaults.
 */
typedef struct PsheBudget {
  size_t nodes;
  size_t samples_per_node;
  double s_max;
  double dt;
  size_t c2_samples;
} PsheBudget;

/*
 Plain values of a constants table; `*_se` are Monte Carlo standard errors.
 */
typedef struct PsheConstantsValues {
  double beta;
  size_t d;
  double gamma_sq;
  double gamma_sq_se;
  double gbar_sq;
  double gbar_sq_se;
  double c0_a;
  double c0_a_se;
  double c0_b;
  double c0_b_se;
  double c1;
  double c1_se;
  double c2;
  double khasminskii_margin;
  double fluctuation_variance;
  size_t truncation_flags;
} PsheConstantsValues;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *pshe_version(void);

/*
 Copies the calling thread's last error message into `buf`.

 `*needed` receives the size including the terminating NUL; a null or short
 buffer yields `BufferTooSmall` without touching the stored message.

 # Safety
 `buf` must be null or valid for `cap` writable bytes; `needed` must be valid.
 */
enum PsheStatus pshe_last_error(char *buf, size_t cap, size_t *needed);

/*
 Builds the standard kernels for dimension `d` (d ≥ 3).

 # Safety
 `out` must be valid for one pointer write.
 */
enum PsheStatus pshe_kernels_new(size_t d, struct PsheKernels **out);

/*
 # Safety
 `k` must be null or a handle from `pshe_kernels_new` not yet freed.
 */
void pshe_kernels_free(struct PsheKernels *k);

/*
 Evaluates φ (`which` = 0) or V (`which` = 1) at radius `r`.

 # Safety
 `k` must be a live kernels handle and `out` valid for one write.
 */
enum PsheStatus pshe_kernels_radial(const struct PsheKernels *k,
                                    uint32_t which,
                                    double r,
                                    double *out);

/*
 Khas'minskii margin β²·sup_x ∫₀^∞ E_x[V(√2 W_s)] ds; admissible when below 1.

 # Safety
 `k` must be a live kernels handle and `out` valid for one write.
 */
enum PsheStatus pshe_khasminskii_margin(const struct PsheKernels *k, double beta, double *out);

/*
 Computes the constants table at β.

 # Safety
 `k` must be a live kernels handle; `budget` may be null; `out` must be valid.
 */
enum PsheStatus pshe_constants_compute(const struct PsheKernels *k,
                                       double beta,
                                       const struct PsheBudget *budget,
                                       uint64_t seed,
                                       struct PsheConstants **out);

/*
 # Safety
 `c` must be a live constants handle and `out` valid for one write.
 */
enum PsheStatus pshe_constants_values(const struct PsheConstants *c,
                                      struct PsheConstantsValues *out);

/*
 Writes the table as JSON to the NUL-terminated path.

 # Safety
 `c` must be a live constants handle and `path` a valid C string.
 */
enum PsheStatus pshe_constants_write_json(const struct PsheConstants *c, const char *path);

/*
 # Safety
 `c` must be null or a handle from `pshe_constants_compute` not yet freed.
 */
void pshe_constants_free(struct PsheConstants *c);

/*
 Configures 𝒵_T(x) sampling: `horizons` has `n_horizons` entries, `starts`
 holds `n_starts` points of dimension `d` back to back.

 # Safety
 Pointers must be valid for the stated lengths; `out` valid for one write.
 */
enum PsheStatus pshe_polymer_new(size_t d,
                                 double beta,
                                 double dt,
                                 size_t n_paths,
                                 const double *horizons,
                                 size_t n_horizons,
                                 const double *starts,
                                 size_t n_starts,
                                 enum PsheBackend backend,
                                 uint64_t seed,
                                 struct PshePolymer **out);

/*
 Samples replica `replica`; `z` receives n_horizons × n_starts values,
 horizon-major. Replicas are independent and reproducible by index.

 # Safety
 `p` must be a live polymer handle and `z` valid for `len` writes.
 */
enum PsheStatus pshe_polymer_sample(const struct PshePolymer *p,
                                    size_t replica,
                                    double *z,
                                    size_t len);

/*
 # Safety
 `p` must be null or a handle from `pshe_polymer_new` not yet freed.
 */
void pshe_polymer_free(struct PshePolymer *p);

/*
 Covariance of the limit fields at (t, x) and (s, y): `field` 0 is ℋ with
 amplitude `amp_sq` = γ², 1 is ℋ̄ with amplitude ḡ².

 # Safety
 `x`, `y` must hold `d` values; `out` valid for one write.
 */
enum PsheStatus pshe_limit_covariance(uint32_t field,
                                      size_t d,
                                      double t,
                                      const double *x,
                                      double s,
                                      const double *y,
                                      double amp_sq,
                                      double *out);

/*
 Acceptance suite in d = 3 at β with the default budget (β = 0 uses the
 reduced exact budget). `out_dir` may be null; otherwise CSVs go there.

 # Safety
 `out_dir` must be null or a valid C string; `out` valid for one write.
 */
enum PsheStatus pshe_suite_new(double beta,
                               uint64_t seed,
                               const char *out_dir,
                               struct PsheSuite **out);

/*
 Runs criterion `id` (1–12). `*pass` gets 1 or 0 and the summary line is
 copied to `line` when it fits (`*needed` reports the size).

 # Safety
 `s` must be a live suite handle; `pass`, `needed` valid; `line` null or valid for `cap` bytes.
 */
enum PsheStatus pshe_suite_run(const struct PsheSuite *s,
                               uint8_t id,
                               int32_t *pass,
                               char *line,
                               size_t cap,
                               size_t *needed);

/*
 # Safety
 `s` must be null or a handle from `pshe_suite_new` not yet freed.
 */
void pshe_suite_free(struct PsheSuite *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSHE_H */
