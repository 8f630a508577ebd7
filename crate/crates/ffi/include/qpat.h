/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef QPAT_H
#define QPAT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Outcome of a call. Values 2 to 4 match the command-line exit codes.
typedef enum QpatStatus {
  QPAT_STATUS_OK = 0,
  // Null pointer, bad length or non-UTF-8 string.
  QPAT_STATUS_INVALID_ARGUMENT = 1,
  // Configuration or input validation failure.
  QPAT_STATUS_CONFIG = 2,
  // Numerical failure: domain, instability, fit, aggregation, convergence.
  QPAT_STATUS_NUMERICAL = 3,
  QPAT_STATUS_IO = 4,
  // A Rust panic was caught at the boundary.
  QPAT_STATUS_PANIC = 5,
} QpatStatus;

// A 2D image on a regular grid, row-major with x fastest.
typedef struct QpatImage QpatImage;

// A phantom description.
typedef struct QpatPhantom QpatPhantom;

// A validated pipeline configuration.
typedef struct QpatPipelineConfig QpatPipelineConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next qpat call on the same thread.
const char *qpat_last_error_message(void);

// Toolkit version as a static NUL-terminated string.
const char *qpat_version(void);

// Copies `nx·ny` values into a new image. `origin_*` is the outer corner of
// pixel (0, 0) in mm.
//
// # Safety
// `data` must point to `nx·ny` readable doubles and `out` must be writable.
enum QpatStatus qpat_image_new(size_t nx,
                               size_t ny,
                               double spacing_mm,
                               double origin_x_mm,
                               double origin_y_mm,
                               const double *data,
                               struct QpatImage **out);

// Reads a float32 raster with its JSON sidecar.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum QpatStatus qpat_image_read(const char *path, struct QpatImage **out);

// Writes the image as a float32 raster plus sidecar.
//
// # Safety
// `image` must be a live handle and `path` a NUL-terminated string.
enum QpatStatus qpat_image_write(const struct QpatImage *image, const char *path);

// # Safety
// `image` must be a live handle; `nx` and `ny` writable.
enum QpatStatus qpat_image_dims(const struct QpatImage *image, size_t *nx, size_t *ny);

// Copies the pixel values into `buf`, which must hold exactly nx·ny values.
//
// # Safety
// `image` must be a live handle and `buf` writable for `len` doubles.
enum QpatStatus qpat_image_copy_data(const struct QpatImage *image, double *buf, size_t len);

// # Safety
// `image` must come from this library and not be used afterwards. Null is
// ignored.
void qpat_image_free(struct QpatImage *image);

// Samples a phantom from the default property ranges; `homogeneous` drops
// the inclusions.
//
// # Safety
// `id` must be a NUL-terminated string and `out` writable.
enum QpatStatus qpat_phantom_sample(const char *id,
                                    uint64_t seed,
                                    bool homogeneous,
                                    struct QpatPhantom **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum QpatStatus qpat_phantom_read(const char *path, struct QpatPhantom **out);

// # Safety
// `phantom` must be a live handle and `path` a NUL-terminated string.
enum QpatStatus qpat_phantom_write(const struct QpatPhantom *phantom, const char *path);

// Background absorption at a wavelength, 1/mm.
//
// # Safety
// `phantom` must be a live handle and `mu_a` writable.
enum QpatStatus qpat_phantom_background_mu_a(const struct QpatPhantom *phantom,
                                             double wavelength_nm,
                                             double *mu_a);

// # Safety
// `phantom` must be a live handle and `count` writable.
enum QpatStatus qpat_phantom_inclusion_count(const struct QpatPhantom *phantom, size_t *count);

// # Safety
// `phantom` must come from this library and not be used afterwards. Null
// is ignored.
void qpat_phantom_free(struct QpatPhantom *phantom);

// Reads and validates a pipeline configuration file. Relative phantom
// paths resolve against the file's directory.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum QpatStatus qpat_pipeline_config_read(const char *path, struct QpatPipelineConfig **out);

// Parses and validates a configuration given as JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` writable.
enum QpatStatus qpat_pipeline_config_from_json(const char *json, struct QpatPipelineConfig **out);

// Runs the pipeline and writes the manifest content hash (64 hex digits
// plus NUL) into `hash_buf` when it is not null.
//
// # Safety
// `config` must be a live handle; `hash_buf`, when given, writable for
// `hash_len` bytes.
enum QpatStatus qpat_pipeline_run(const struct QpatPipelineConfig *config,
                                  char *hash_buf,
                                  size_t hash_len);

// # Safety
// `config` must come from this library and not be used afterwards. Null is
// ignored.
void qpat_pipeline_config_free(struct QpatPipelineConfig *config);

// μ̂a = (signal − intercept)/slope, clamped at zero.
//
// # Safety
// `image` must be a live handle and `out` writable.
enum QpatStatus qpat_apply_calibration(const struct QpatImage *image,
                                       double slope,
                                       double intercept,
                                       struct QpatImage **out);

// μ̂a = (signal/φ − intercept)/slope; NaN where φ is below the floor.
//
// # Safety
// `image` and `phi` must be live handles and `out` writable.
enum QpatStatus qpat_fluence_correct(const struct QpatImage *image,
                                     const struct QpatImage *phi,
                                     double slope,
                                     double intercept,
                                     struct QpatImage **out);

// sO2 from `n` absorption images, one per wavelength, using the shipped
// hemoglobin spectra.
//
// # Safety
// `images` and `wavelengths_nm` must each hold `n` entries and `out` be
// writable.
enum QpatStatus qpat_linear_unmix_so2(const struct QpatImage *const *images,
                                      const double *wavelengths_nm,
                                      size_t n,
                                      struct QpatImage **out);

// Generalised contrast-to-noise ratio over `n_bins` shared bins.
//
// # Safety
// `a` and `b` must hold `na` and `nb` doubles; `out` writable.
enum QpatStatus qpat_gcnr(const double *a,
                          size_t na,
                          const double *b,
                          size_t nb,
                          size_t n_bins,
                          double *out);

// # Safety
// `x` and `y` must hold `n` doubles; `out` writable.
enum QpatStatus qpat_pearson_r(const double *x, const double *y, size_t n, double *out);

// Mann–Whitney U of `a` against `b` with a two-sided p-value (exact for
// groups of up to 8, normal approximation otherwise).
//
// # Safety
// `a` and `b` must hold `na` and `nb` doubles; `u` and `p` writable.
enum QpatStatus qpat_mann_whitney(const double *a,
                                  size_t na,
                                  const double *b,
                                  size_t nb,
                                  double *u,
                                  double *p);

// Total reflectance and transmittance of a slab under collimated normal
// incidence. Coefficients in 1/mm, thickness in mm.
//
// # Safety
// `r` and `t` must be writable.
enum QpatStatus qpat_ad_forward(double mu_a,
                                double mu_s_prime,
                                double g,
                                double n,
                                double thickness,
                                double *r,
                                double *t);

// Inverts measured (R, T) to (μa, μs′) in 1/mm. On non-convergence the
// best candidate is still written and the status is numerical.
//
// # Safety
// `mu_a`, `mu_s_prime` and `residual` must be writable.
enum QpatStatus qpat_ad_inverse(double r,
                                double t,
                                double thickness,
                                double g,
                                double n,
                                double *mu_a,
                                double *mu_s_prime,
                                double *residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPAT_H */
