#ifndef CVS_H
#define CVS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CvsStatus {
  CVS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CVS_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of range or inconsistent with another.
   */
  CVS_STATUS_INVALID_ARGUMENT = 2,
  CVS_STATUS_IO = 3,
  /**
   * Malformed file content.
   */
  CVS_STATUS_FORMAT = 4,
  /**
   * Frame, block or patch geometry does not fit.
   */
  CVS_STATUS_GEOMETRY = 5,
  /**
   * A solver diverged or produced non-finite values.
   */
  CVS_STATUS_DIVERGENCE = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  CVS_STATUS_INTERNAL = 7,
} CvsStatus;

typedef enum CvsDecodeMode {
  CVS_DECODE_MODE_FULL = 0,
  CVS_DECODE_MODE_INITIALIZER_ONLY = 1,
  CVS_DECODE_MODE_INTRA = 2,
} CvsDecodeMode;

typedef enum CvsDictMethod {
  CVS_DICT_METHOD_KSVD = 0,
  CVS_DICT_METHOD_MOD = 1,
  CVS_DICT_METHOD_MDU = 2,
} CvsDictMethod;

/**
 * Decoder output: reconstruction plus per-frame reports.
 */
typedef struct CvsDecoded CvsDecoded;

/**
 * Encoded measurements of a sequence.
 */
typedef struct CvsMeasurements CvsMeasurements;

/**
 * Block sensing matrix.
 */
typedef struct CvsSensing CvsSensing;

/**
 * A luma video sequence.
 */
typedef struct CvsSequence CvsSequence;

/**
 * Encoder settings. Fill with [`cvs_encode_params_default`] first.
 */
typedef struct CvsEncodeParams {
  size_t block_side;
  double mr_key;
  double mr_nonkey;
  size_t gop_size;
  uint64_t seed;
  double noise_sigma;
} CvsEncodeParams;

/**
 * Decoder settings. `mode` holds a [`CvsDecodeMode`] and `method` a
 * [`CvsDictMethod`] value (plain integers so that out-of-range input is an
 * error rather than undefined behaviour). `config_json`, when not null, is
 * a complete decoder configuration in the JSON layout written by
 * `cvs bench`; `mode` and `method` are applied on top of it.
 */
typedef struct CvsDecodeOptions {
  uint32_t mode;
  uint32_t method;
  const char *config_json;
} CvsDecodeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *cvs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cvs_version(void);

/**
 * PSNR in dB of two `rows x cols` images. Identical images give +infinity.
 *
 * # Safety
 * `a` and `b` must point to `rows * cols` readable doubles and `out` to a
 * writable double.
 */
enum CvsStatus cvs_psnr(const double *a, const double *b, size_t rows, size_t cols, double *out);

/**
 * Global single-window SSIM of two `rows x cols` images.
 *
 * # Safety
 * Same contract as [`cvs_psnr`].
 */
enum CvsStatus cvs_ssim(const double *a, const double *b, size_t rows, size_t cols, double *out);

/**
 * Generates the row-orthonormal sensing matrix for one block size.
 *
 * # Safety
 * `out` must be a writable pointer; on success it receives a handle to be
 * released with [`cvs_sensing_free`].
 */
enum CvsStatus cvs_sensing_new(uint64_t seed,
                               double mr,
                               size_t block_side,
                               struct CvsSensing **out);

/**
 * Measurements per block (`m_b`) and block length (`B * B`).
 *
 * # Safety
 * `phi` must be a live handle; `rows` and `cols` writable or null.
 */
enum CvsStatus cvs_sensing_shape(const struct CvsSensing *phi, size_t *rows, size_t *cols);

/**
 * `y = Φx` for one block vector (column-major within the block).
 *
 * # Safety
 * `x` must hold `x_len` doubles and `y` room for `y_len` doubles.
 */
enum CvsStatus cvs_sensing_forward(const struct CvsSensing *phi,
                                   const double *x,
                                   size_t x_len,
                                   double *y,
                                   size_t y_len);

/**
 * `x = Φᵀy` for one block.
 *
 * # Safety
 * `y` must hold `y_len` doubles and `x` room for `x_len` doubles.
 */
enum CvsStatus cvs_sensing_adjoint(const struct CvsSensing *phi,
                                   const double *y,
                                   size_t y_len,
                                   double *x,
                                   size_t x_len);

/**
 * # Safety
 * `phi` must come from [`cvs_sensing_new`] and not be used afterwards.
 */
void cvs_sensing_free(struct CvsSensing *phi);

/**
 * Builds a sequence from frame-major, row-major 8-bit luma samples.
 *
 * # Safety
 * `data` must hold `rows * cols * frames` bytes; `out` must be writable.
 */
enum CvsStatus cvs_sequence_from_luma(const uint8_t *data,
                                      size_t rows,
                                      size_t cols,
                                      size_t frames,
                                      struct CvsSequence **out);

/**
 * Loads a `.y4m` file, or raw 8-bit luma with a `.json` sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CvsStatus cvs_sequence_load(const char *path, struct CvsSequence **out);

/**
 * Writes a sequence; `.y4m` paths get a YUV4MPEG2 stream, anything else raw
 * luma plus a JSON sidecar.
 *
 * # Safety
 * `seq` must be a live handle and `path` a NUL-terminated string.
 */
enum CvsStatus cvs_sequence_save(const struct CvsSequence *seq, const char *path, double fps);

/**
 * # Safety
 * `seq` must be a live handle; the output pointers writable or null.
 */
enum CvsStatus cvs_sequence_dims(const struct CvsSequence *seq,
                                 size_t *rows,
                                 size_t *cols,
                                 size_t *frames);

/**
 * Copies frame `index` into a row-major buffer of `len == rows * cols`.
 *
 * # Safety
 * `seq` must be a live handle and `out` hold `len` writable doubles.
 */
enum CvsStatus cvs_sequence_frame(const struct CvsSequence *seq,
                                  size_t index,
                                  double *out,
                                  size_t len);

/**
 * # Safety
 * `seq` must come from this library and not be used afterwards.
 */
void cvs_sequence_free(struct CvsSequence *seq);

/**
 * # Safety
 * `out` must be writable.
 */
enum CvsStatus cvs_encode_params_default(struct CvsEncodeParams *out);

/**
 * Measures every frame of `seq`.
 *
 * # Safety
 * `seq` and `params` must be valid pointers; `out` writable.
 */
enum CvsStatus cvs_encode(const struct CvsSequence *seq,
                          const struct CvsEncodeParams *params,
                          struct CvsMeasurements **out);

/**
 * Reads a `.cvsm` container.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CvsStatus cvs_measurements_load(const char *path, struct CvsMeasurements **out);

/**
 * Writes a `.cvsm` container.
 *
 * # Safety
 * `set` must be a live handle and `path` a NUL-terminated string.
 */
enum CvsStatus cvs_measurements_save(const struct CvsMeasurements *set, const char *path);

/**
 * # Safety
 * `set` must come from this library and not be used afterwards.
 */
void cvs_measurements_free(struct CvsMeasurements *set);

/**
 * # Safety
 * `out` must be writable.
 */
enum CvsStatus cvs_decode_options_default(struct CvsDecodeOptions *out);

/**
 * Decodes a container. `reference` may be null; when given, per-frame PSNR
 * and SSIM are computed against it.
 *
 * # Safety
 * `set` must be a live handle, `options` valid (or null for defaults),
 * `reference` null or a live handle, and `out` writable.
 */
enum CvsStatus cvs_decode(const struct CvsMeasurements *set,
                          const struct CvsDecodeOptions *options,
                          const struct CvsSequence *reference,
                          struct CvsDecoded **out);

/**
 * New sequence handle holding a copy of the reconstruction.
 *
 * # Safety
 * `decoded` must be a live handle and `out` writable.
 */
enum CvsStatus cvs_decoded_sequence(const struct CvsDecoded *decoded, struct CvsSequence **out);

/**
 * Mean PSNR and SSIM over all frames. Fails with `InvalidArgument` when
 * the decode ran without a reference.
 *
 * # Safety
 * `decoded` must be a live handle; `psnr` and `ssim` writable or null.
 */
enum CvsStatus cvs_decoded_mean_quality(const struct CvsDecoded *decoded,
                                        double *psnr,
                                        double *ssim);

/**
 * Writes the per-frame CSV report.
 *
 * # Safety
 * `decoded` must be a live handle and `path` a NUL-terminated string.
 */
enum CvsStatus cvs_decoded_write_csv(const struct CvsDecoded *decoded, const char *path);

/**
 * # Safety
 * `decoded` must come from [`cvs_decode`] and not be used afterwards.
 */
void cvs_decoded_free(struct CvsDecoded *decoded);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CVS_H */
