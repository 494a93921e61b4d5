#ifndef EVDEBLUR_H
#define EVDEBLUR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum EvdbStatus {
  EVDB_STATUS_OK = 0,
  EVDB_STATUS_NULL_POINTER = 1,
  EVDB_STATUS_INVALID_ARGUMENT = 2,
  EVDB_STATUS_PARSE = 3,
  EVDB_STATUS_FORMAT = 4,
  EVDB_STATUS_SHAPE = 5,
  EVDB_STATUS_NUMERIC = 6,
  EVDB_STATUS_WEIGHTS = 7,
  EVDB_STATUS_IO = 8,
  EVDB_STATUS_UNSORTED = 9,
  EVDB_STATUS_BUFFER_TOO_SMALL = 10,
  EVDB_STATUS_PANIC = 11,
} EvdbStatus;

/**
 * Event file encoding.
 */
typedef enum EvdbFormat {
  EVDB_FORMAT_TEXT = 0,
  EVDB_FORMAT_BINARY = 1,
} EvdbFormat;

/**
 * Opaque intensity image.
 */
typedef struct EvdbImage EvdbImage;

/**
 * Opaque point cloud (sensor space or normalised).
 */
typedef struct EvdbPoints EvdbPoints;

/**
 * Opaque event stream.
 */
typedef struct EvdbStream EvdbStream;

/**
 * Opaque voxel grid.
 */
typedef struct EvdbVoxel EvdbVoxel;

/**
 * Byte buffer owned by the library; release with [`evdb_buffer_free`].
 */
typedef struct EvdbBuffer {
  uint8_t *data;
  size_t len;
} EvdbBuffer;

typedef struct EvdbCrop {
  size_t x0;
  size_t y0;
  size_t side;
  size_t center_x;
  size_t center_y;
  double cell_density;
} EvdbCrop;

typedef struct EvdbMetricReport {
  /**
   * `+inf` for identical images.
   */
  double psnr;
  double ssim;
  double l1;
  double ssim_loss;
  double msfr;
  double total;
} EvdbMetricReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *evdb_last_error(void);

void evdb_buffer_free(struct EvdbBuffer buffer);

/**
 * Parses an event file held in memory. `width`/`height` of zero mean
 * "take the size from the file header". The result is sorted by time.
 */
enum EvdbStatus evdb_stream_parse(const uint8_t *data,
                                  size_t len,
                                  uint16_t width,
                                  uint16_t height,
                                  struct EvdbStream **out);

/**
 * Builds a stream from parallel arrays; polarities must be -1 or +1.
 */
enum EvdbStatus evdb_stream_from_arrays(uint16_t width,
                                        uint16_t height,
                                        uint64_t t0,
                                        uint64_t tn,
                                        const uint64_t *t,
                                        const uint16_t *x,
                                        const uint16_t *y,
                                        const int8_t *p,
                                        size_t count,
                                        struct EvdbStream **out);

size_t evdb_stream_len(const struct EvdbStream *stream);

enum EvdbStatus evdb_stream_sort(struct EvdbStream *stream);

/**
 * Serialises a stream; free the buffer with [`evdb_buffer_free`].
 */
enum EvdbStatus evdb_stream_write(const struct EvdbStream *stream,
                                  enum EvdbFormat format,
                                  struct EvdbBuffer *out);

void evdb_stream_free(struct EvdbStream *stream);

/**
 * Copies `width * height` row-major intensities into a new image.
 */
enum EvdbStatus evdb_image_new(size_t width,
                               size_t height,
                               const double *data,
                               struct EvdbImage **out);

enum EvdbStatus evdb_image_dims(const struct EvdbImage *image, size_t *width, size_t *height);

enum EvdbStatus evdb_image_copy(const struct EvdbImage *image, double *dst, size_t len);

void evdb_image_free(struct EvdbImage *image);

enum EvdbStatus evdb_voxel_build(const struct EvdbStream *stream,
                                 size_t bins,
                                 struct EvdbVoxel **out);

enum EvdbStatus evdb_voxel_upscale(const struct EvdbVoxel *voxel,
                                   size_t rows,
                                   size_t cols,
                                   struct EvdbVoxel **out);

enum EvdbStatus evdb_voxel_dims(const struct EvdbVoxel *voxel,
                                size_t *width,
                                size_t *height,
                                size_t *bins);

/**
 * Copies the cells, laid out as (y, x, bin).
 */
enum EvdbStatus evdb_voxel_copy(const struct EvdbVoxel *voxel, double *dst, size_t len);

void evdb_voxel_free(struct EvdbVoxel *voxel);

/**
 * Samples `per_bin` points from each of `bins` time bins; with `normalize`
 * the coordinates are mapped into the unit cube.
 */
enum EvdbStatus evdb_points_build(const struct EvdbStream *stream,
                                  size_t bins,
                                  size_t per_bin,
                                  uint64_t seed,
                                  bool normalize,
                                  struct EvdbPoints **out);

enum EvdbStatus evdb_points_dims(const struct EvdbPoints *points, size_t *bins, size_t *per_bin);

/**
 * Copies `3 * bins * per_bin` values as interleaved (x, y, t).
 */
enum EvdbStatus evdb_points_copy(const struct EvdbPoints *points, double *dst, size_t len);

void evdb_points_free(struct EvdbPoints *points);

/**
 * Farthest point sampling over `n` interleaved (x, y, z) points; writes
 * `count` indices.
 */
enum EvdbStatus evdb_fps(const double *xyz,
                         size_t n,
                         size_t count,
                         uint64_t seed,
                         size_t *out_indices);

enum EvdbStatus evdb_density_crop(const struct EvdbStream *stream,
                                  size_t frame_rows,
                                  size_t frame_cols,
                                  size_t side,
                                  double threshold,
                                  size_t cell,
                                  uint64_t seed,
                                  struct EvdbCrop *out);

double evdb_gaussian_weight(double range, double dist);

enum EvdbStatus evdb_edi_synthesize(const struct EvdbImage *sharp,
                                    const struct EvdbStream *stream,
                                    double c,
                                    uint64_t steps,
                                    struct EvdbImage **out);

enum EvdbStatus evdb_edi_deblur(const struct EvdbImage *blurry,
                                const struct EvdbStream *stream,
                                double c,
                                uint64_t steps,
                                struct EvdbImage **out);

enum EvdbStatus evdb_psnr(const struct EvdbImage *a,
                          const struct EvdbImage *b,
                          double peak,
                          double *out);

enum EvdbStatus evdb_ssim(const struct EvdbImage *a,
                          const struct EvdbImage *b,
                          double peak,
                          double *out);

enum EvdbStatus evdb_total_loss(const struct EvdbImage *pred,
                                const struct EvdbImage *gt,
                                double l1_weight,
                                double ssim_weight,
                                double msfr_weight,
                                double peak,
                                size_t scales,
                                struct EvdbMetricReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVDEBLUR_H */
