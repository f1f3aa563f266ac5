#ifndef LAPMAP_H
#define LAPMAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum LapmapStatus {
  LAPMAP_STATUS_OK = 0,
  LAPMAP_STATUS_NULL_POINTER = 1,
  LAPMAP_STATUS_INVALID_ARGUMENT = 2,
  LAPMAP_STATUS_IO = 3,
  LAPMAP_STATUS_SOLVER = 4,
  LAPMAP_STATUS_PANIC = 5,
} LapmapStatus;

/**
 * Color-vision deficiency for `lapmap_daltonize`.
 */
typedef enum LapmapCvd {
  LAPMAP_CVD_PROTAN = 0,
  LAPMAP_CVD_DEUTAN = 1,
  LAPMAP_CVD_TRITAN = 2,
} LapmapCvd;

/**
 * An image of `width * height` pixels with interleaved `f64` channels.
 */
typedef struct LapmapImage LapmapImage;

/**
 * Solver settings. Start from `lapmap_solve_options_default`.
 */
typedef struct LapmapSolveOptions {
  double sigma_r;
  double sigma_s;
  size_t max_side;
  size_t max_iters;
  size_t restarts;
  uint64_t seed;
  /**
   * 0 for the default family, 1 for linear, q >= 2 for q soft regions.
   */
  size_t family;
} LapmapSolveOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lapmap_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next lapmap call on the same thread.
 */
const char *lapmap_last_error_message(void);

struct LapmapSolveOptions lapmap_solve_options_default(void);

/**
 * Copies `width * height * channels` samples into a new image.
 *
 * # Safety
 * `data` must point to that many readable `f64`; `out` must be writable.
 */
enum LapmapStatus lapmap_image_new(size_t width,
                                   size_t height,
                                   size_t channels,
                                   const double *data,
                                   struct LapmapImage **out);

/**
 * Loads PNG, PGM/PPM or LMCH.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LapmapStatus lapmap_image_load(const char *path, struct LapmapImage **out);

/**
 * Saves in the format implied by the extension.
 *
 * # Safety
 * `img` must be a live handle; `path` a NUL-terminated string.
 */
enum LapmapStatus lapmap_image_save(const struct LapmapImage *img, const char *path);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `img` must come from this library and not be freed twice.
 */
void lapmap_image_free(struct LapmapImage *img);

/**
 * Writes the dimensions; any output pointer may be NULL.
 *
 * # Safety
 * `img` must be a live handle; non-NULL outputs must be writable.
 */
enum LapmapStatus lapmap_image_dims(const struct LapmapImage *img,
                                    size_t *width,
                                    size_t *height,
                                    size_t *channels);

/**
 * Interleaved samples, valid while the handle lives. NULL for a NULL handle.
 *
 * # Safety
 * `img` must be NULL or a live handle.
 */
const double *lapmap_image_data(const struct LapmapImage *img);

/**
 * Converts an RGB image to gray. `options` may be NULL for defaults;
 * `final_cost` may be NULL.
 *
 * # Safety
 * `img` must be a live handle; `out` writable; `options` and `final_cost`
 * NULL or valid.
 */
enum LapmapStatus lapmap_decolorize(const struct LapmapImage *img,
                                    const struct LapmapSolveOptions *options,
                                    struct LapmapImage **out,
                                    double *final_cost);

/**
 * Recolors an RGB image for the given deficiency.
 *
 * # Safety
 * As for `lapmap_decolorize`.
 */
enum LapmapStatus lapmap_daltonize(const struct LapmapImage *img,
                                   enum LapmapCvd cvd,
                                   const struct LapmapSolveOptions *options,
                                   struct LapmapImage **out,
                                   double *final_cost);

/**
 * RWMS between a source and its mapping (scaled by 100). `error_image`
 * may be NULL; otherwise it receives the per-pixel error.
 *
 * # Safety
 * `src`, `dst` live handles; `mean` writable; `error_image` NULL or writable.
 */
enum LapmapStatus lapmap_rwms(const struct LapmapImage *src,
                              const struct LapmapImage *dst,
                              double *mean,
                              struct LapmapImage **error_image);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAPMAP_H */
