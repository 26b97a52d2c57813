#ifndef SFDA_H
#define SFDA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SFDA_STATUS_OK = 0,
  SFDA_STATUS_NULL_POINTER = 1,
  SFDA_STATUS_INVALID_ARGUMENT = 2,
  SFDA_STATUS_DIMS_MISMATCH = 3,
  SFDA_STATUS_PRIOR = 4,
  SFDA_STATUS_REFINE = 5,
  SFDA_STATUS_PANIC = 6,
} SfdaStatus;

/**
 * Sample type of an image buffer.
 */
typedef enum {
  SFDA_FORMAT_U8 = 0,
  SFDA_FORMAT_U16 = 1,
  SFDA_FORMAT_F32 = 2,
} SfdaFormat;

/**
 * Parsed priors table.
 */
typedef struct SfdaPriors SfdaPriors;

/**
 * Voxel lattice: `rank` is 2 (y, x) or 3 (z, y, x). `spacing` may be null
 * for unit spacing.
 */
typedef struct {
  const size_t *dims;
  size_t rank;
  const double *spacing;
} SfdaGrid;

/**
 * Inputs of [`sfda_refine`].
 *
 * `class_labels`/`class_names` name the `n_classes` labels of the mask;
 * the probability buffer (optional, null when absent) holds one
 * interleaved channel per class in that order. `connectivity` is 4 or 8 in
 * 2-D, 6 or 26 in 3-D, or 0 for the full neighborhood.
 */
typedef struct {
  SfdaGrid grid;
  const uint32_t *mask;
  size_t mask_len;
  const uint32_t *class_labels;
  const char *const *class_names;
  size_t n_classes;
  const float *image;
  size_t image_len;
  size_t image_channels;
  SfdaFormat image_format;
  const float *prob;
  size_t prob_len;
  uint32_t connectivity;
} SfdaRefineInput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version; static storage.
 */
const char *sfda_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next library call on the same thread.
 */
const char *sfda_last_error_message(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sfda_string_free(char *s);

/**
 * Reads a priors JSON file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
SfdaStatus sfda_priors_load(const char *path, SfdaPriors **out);

/**
 * Parses a priors JSON document held in memory.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
SfdaStatus sfda_priors_parse(const char *json, SfdaPriors **out);

/**
 * # Safety
 * `priors` must come from `sfda_priors_load`/`sfda_priors_parse` and not
 * have been freed. Null is ignored.
 */
void sfda_priors_free(SfdaPriors *priors);

/**
 * Refines a mask. Writes the refined labels to `out_mask` (`out_len`
 * values, equal to the voxel count) and, when `out_report` is not null,
 * the JSON report to `*out_report` (free with `sfda_string_free`).
 *
 * # Safety
 * All pointers in `input` must be valid for the stated lengths;
 * `out_mask` must hold `out_len` values.
 */
SfdaStatus sfda_refine(const SfdaPriors *priors,
                       const SfdaRefineInput *input,
                       uint32_t *out_mask,
                       size_t out_len,
                       char **out_report);

/**
 * DICE of `label` between two masks of `len` voxels.
 *
 * # Safety
 * `pred` and `gt` must hold `len` values; `out` must be writable.
 */
SfdaStatus sfda_dice(const SfdaGrid *grid,
                     const uint32_t *pred,
                     const uint32_t *gt,
                     size_t len,
                     uint32_t label,
                     double *out);

/**
 * Average symmetric surface distance in spacing units. Writes NaN when
 * either mask lacks the label. `slice_mode` non-zero averages per-slice
 * 2-D distances instead.
 *
 * # Safety
 * `pred` and `gt` must hold `len` values; `out` must be writable.
 */
SfdaStatus sfda_asd(const SfdaGrid *grid,
                    const uint32_t *pred,
                    const uint32_t *gt,
                    size_t len,
                    uint32_t label,
                    int32_t slice_mode,
                    double *out);

/**
 * Chaos score between two nul-terminated strings, in `[0, 100]`.
 *
 * # Safety
 * Both strings must be nul-terminated; `out` must be writable.
 */
SfdaStatus sfda_chaos_score(const char *original, const char *perturbed, double *out);

/**
 * Histogram-equalizes a single-channel image. `out` receives `len`
 * samples and `out_format` their type (u8 for up to 256 levels). A
 * degenerate image is copied unchanged with its own format.
 *
 * # Safety
 * `values` and `out` must hold `len` values; `out_format` must be
 * writable.
 */
SfdaStatus sfda_histogram_equalize(const SfdaGrid *grid,
                                   const float *values,
                                   size_t len,
                                   SfdaFormat format,
                                   size_t levels,
                                   int32_t per_slice,
                                   float *out,
                                   SfdaFormat *out_format);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SFDA_H */
