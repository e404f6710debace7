#ifndef XSSAB_H
#define XSSAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which layer of an explanation map to copy out.
typedef enum XssabMapLayer {
  XSSAB_MAP_LAYER_FUSED = 0,
  XSSAB_MAP_LAYER_POSITIVE = 1,
  XSSAB_MAP_LAYER_NEGATIVE = 2,
} XssabMapLayer;

typedef enum XssabPalette {
  XSSAB_PALETTE_GREEN_PINK = 0,
  XSSAB_PALETTE_COLORBLIND_SAFE = 1,
} XssabPalette;

// Result code of every fallible call. Values 3 to 10 mirror the exit codes
// of the command-line tool.
typedef enum XssabStatus {
  XSSAB_STATUS_OK = 0,
  XSSAB_STATUS_NULL_POINTER = 1,
  XSSAB_STATUS_INVALID_ARGUMENT = 2,
  XSSAB_STATUS_SHAPE = 3,
  XSSAB_STATUS_DOMAIN = 4,
  XSSAB_STATUS_DEGENERATE = 5,
  XSSAB_STATUS_CONTRACT = 6,
  XSSAB_STATUS_LOAD = 7,
  XSSAB_STATUS_DATA = 8,
  XSSAB_STATUS_IO = 9,
  XSSAB_STATUS_FORMAT = 10,
  XSSAB_STATUS_PANIC = 11,
} XssabStatus;

// Opaque explanation-map handle.
typedef struct XssabMap XssabMap;

// Opaque model handle.
typedef struct XssabModel XssabModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *xssab_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *xssab_version(void);

// Builds a seeded reference model. `kind` is `"tiny-cnn"` or
// `"linear-toy"`.
//
// # Safety
// `kind` must be a NUL-terminated string and `out_model` writable.
enum XssabStatus xssab_model_new(const char *kind,
                                 uint64_t seed,
                                 size_t height,
                                 size_t width,
                                 size_t embedding_dim,
                                 struct XssabModel **out_model);

// Loads a model from a weight file.
//
// # Safety
// `path` must be a NUL-terminated string and `out_model` writable.
enum XssabStatus xssab_model_load(const char *path, struct XssabModel **out_model);

// Writes the model's weights.
//
// # Safety
// `model` must come from this library; `path` must be NUL-terminated.
enum XssabStatus xssab_model_save(const struct XssabModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void xssab_model_free(struct XssabModel *model);

// Input height and width the model expects.
//
// # Safety
// Pointers must be valid.
enum XssabStatus xssab_model_input_shape(const struct XssabModel *model,
                                         size_t *out_height,
                                         size_t *out_width);

// Embedding length of the model.
//
// # Safety
// Pointers must be valid.
enum XssabStatus xssab_model_embedding_dim(const struct XssabModel *model, size_t *out_dim);

// Copies the model id into `buf` (NUL-terminated, truncated to
// `buf_len`) and stores the full length without the NUL in `out_len`.
// `buf` may be null to query the length.
//
// # Safety
// `buf` must hold `buf_len` bytes when non-null; `out_len` must be valid.
enum XssabStatus xssab_model_id(const struct XssabModel *model,
                                char *buf,
                                size_t buf_len,
                                size_t *out_len);

// Maps 8-bit HWC pixels to the model range `(v/255 − 0.5)/0.5`.
//
// # Safety
// `pixels` and `out_image` must each hold `height·width·3` elements.
enum XssabStatus xssab_preprocess(const uint8_t *pixels,
                                  size_t height,
                                  size_t width,
                                  double *out_image,
                                  size_t out_len);

// Unit-norm embedding of a preprocessed image.
//
// # Safety
// `image` must hold `image_len` values and `out_embedding` `out_len`.
enum XssabStatus xssab_embed(const struct XssabModel *model,
                             const double *image,
                             size_t image_len,
                             double *out_embedding,
                             size_t out_len);

// Gradient of `w · normalize(f(image))` with respect to the image.
//
// # Safety
// Buffers must hold the stated number of elements.
enum XssabStatus xssab_vjp(const struct XssabModel *model,
                           const double *image,
                           size_t image_len,
                           const double *cotangent,
                           size_t cotangent_len,
                           double *out_gradient,
                           size_t out_len);

// Cosine similarity of two vectors; both are normalized first.
//
// # Safety
// `a` and `b` must hold `dim` values; `out_score` must be valid.
enum XssabStatus xssab_cosine(const double *a, const double *b, size_t dim, double *out_score);

// Explanation maps for both images of a pair at decision threshold
// `threshold`. On success the caller owns both map handles.
//
// # Safety
// `image_a` and `image_b` must hold `image_len` values each; output
// pointers must be valid.
enum XssabStatus xssab_explain_pair(const struct XssabModel *model,
                                    const double *image_a,
                                    const double *image_b,
                                    size_t image_len,
                                    double threshold,
                                    double *out_score,
                                    struct XssabMap **out_map_a,
                                    struct XssabMap **out_map_b);

// Height and width of a map.
//
// # Safety
// Pointers must be valid.
enum XssabStatus xssab_map_shape(const struct XssabMap *map, size_t *out_height, size_t *out_width);

// Copies one layer (row-major, `height·width` values) into `out_values`.
//
// # Safety
// `out_values` must hold `out_len` values.
enum XssabStatus xssab_map_copy(const struct XssabMap *map,
                                enum XssabMapLayer layer,
                                double *out_values,
                                size_t out_len);

// Writes a map file.
//
// # Safety
// `path` must be NUL-terminated.
enum XssabStatus xssab_map_save(const struct XssabMap *map, const char *path);

// Reads a map file.
//
// # Safety
// `path` must be NUL-terminated and `out_map` writable.
enum XssabStatus xssab_map_load(const char *path, struct XssabMap **out_map);

// Renders the fused layer as a heatmap PNG.
//
// # Safety
// `path` must be NUL-terminated.
enum XssabStatus xssab_map_render_png(const struct XssabMap *map,
                                      const char *path,
                                      enum XssabPalette palette);

// Releases a map. Null is ignored.
//
// # Safety
// `map` must come from this library and not be used afterwards.
void xssab_map_free(struct XssabMap *map);

// False match and false non-match rates at `threshold` (a score at the
// threshold is a match).
//
// # Safety
// Score arrays must hold the stated counts; outputs must be valid.
enum XssabStatus xssab_fmr_fnmr(const double *genuine,
                                size_t n_genuine,
                                const double *imposter,
                                size_t n_imposter,
                                double threshold,
                                double *out_fmr,
                                double *out_fnmr);

// Equal-error threshold and rate.
//
// # Safety
// Score arrays must hold the stated counts; outputs must be valid.
enum XssabStatus xssab_eer(const double *genuine,
                           size_t n_genuine,
                           const double *imposter,
                           size_t n_imposter,
                           double *out_threshold,
                           double *out_eer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XSSAB_H */
