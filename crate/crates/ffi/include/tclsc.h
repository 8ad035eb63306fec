#ifndef TCLSC_H
#define TCLSC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum TclscStatus {
  TCLSC_STATUS_OK = 0,
  TCLSC_STATUS_NULL_POINTER = 1,
  TCLSC_STATUS_INVALID_ARGUMENT = 2,
  TCLSC_STATUS_MALFORMED_MESSAGE = 3,
  TCLSC_STATUS_STRUCTURE_MISMATCH = 4,
  TCLSC_STATUS_PANIC = 5,
} TclscStatus;

/**
 * An owned byte buffer returned by the library.
 */
typedef struct TclscBuffer TclscBuffer;

/**
 * Named FP32 tensors in insertion order.
 */
typedef struct TclscParams TclscParams;

/**
 * Header fields of an exchange message.
 */
typedef struct TclscMessageMeta {
  uint32_t round;
  /**
   * `'A'` or `'B'`.
   */
  uint8_t party;
  uint64_t data_size;
} TclscMessageMeta;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call into the library on the same thread.
 */
const char *tclsc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tclsc_version(void);

struct TclscParams *tclsc_params_new(void);

/**
 * # Safety
 * `params` must come from this library and not be used afterwards.
 */
void tclsc_params_free(struct TclscParams *params);

/**
 * Appends a tensor. `data` holds the product of `shape` values.
 *
 * # Safety
 * Pointers must be valid for the given lengths; `name` is NUL-terminated.
 */
enum TclscStatus tclsc_params_push(struct TclscParams *params,
                                   const char *name,
                                   const size_t *shape,
                                   size_t ndim,
                                   const float *data,
                                   size_t len);

/**
 * Number of tensors, or 0 for a null handle.
 *
 * # Safety
 * `params` is null or a live handle.
 */
size_t tclsc_params_len(const struct TclscParams *params);

/**
 * Element count of tensor `index`, or 0 when out of range.
 *
 * # Safety
 * `params` is null or a live handle.
 */
size_t tclsc_params_numel(const struct TclscParams *params, size_t index);

/**
 * Copies tensor `index` into `out`, which holds `len` floats.
 *
 * # Safety
 * `out` must be writable for `len` floats.
 */
enum TclscStatus tclsc_params_read(const struct TclscParams *params,
                                   size_t index,
                                   float *out,
                                   size_t len);

/**
 * Quantizes `params` to INT8 and frames it as an exchange message.
 *
 * # Safety
 * `out` must be writable; the buffer is freed with [`tclsc_buffer_free`].
 */
enum TclscStatus tclsc_message_encode(const struct TclscParams *params,
                                      struct TclscMessageMeta meta,
                                      struct TclscBuffer **out);

/**
 * Parses a message and returns its dequantized parameters.
 *
 * # Safety
 * `bytes` must be readable for `len` bytes; `out` writable; `meta` may be null.
 */
enum TclscStatus tclsc_message_decode(const uint8_t *bytes,
                                      size_t len,
                                      struct TclscMessageMeta *meta,
                                      struct TclscParams **out);

/**
 * `m_a·a + (1 − m_a)·b`, tensor by tensor.
 *
 * # Safety
 * `a` and `b` are live handles; `out` is writable.
 */
enum TclscStatus tclsc_aggregate(const struct TclscParams *a,
                                 const struct TclscParams *b,
                                 double m_a,
                                 struct TclscParams **out);

/**
 * Quantizes `len` floats to INT8 with one scale and zero point.
 *
 * # Safety
 * `data` readable and `q` writable for `len` elements; `scale`, `zero_point` writable.
 */
enum TclscStatus tclsc_quantize(const float *data,
                                size_t len,
                                int8_t *q,
                                float *scale,
                                int16_t *zero_point);

/**
 * Inverse of [`tclsc_quantize`].
 *
 * # Safety
 * `q` readable and `out` writable for `len` elements.
 */
enum TclscStatus tclsc_dequantize(const int8_t *q,
                                  size_t len,
                                  float scale,
                                  int16_t zero_point,
                                  float *out);

/**
 * # Safety
 * `buf` is null or a live handle.
 */
const uint8_t *tclsc_buffer_data(const struct TclscBuffer *buf);

/**
 * # Safety
 * `buf` is null or a live handle.
 */
size_t tclsc_buffer_len(const struct TclscBuffer *buf);

/**
 * # Safety
 * `buf` must come from this library and not be used afterwards.
 */
void tclsc_buffer_free(struct TclscBuffer *buf);

/**
 * Corpus BLEU over `count` sentence pairs. Token ids are concatenated in
 * `cand_ids` / `ref_ids` with per-sentence lengths in `cand_lens` / `ref_lens`.
 *
 * # Safety
 * Arrays must be readable for the lengths they describe; `out` writable.
 */
enum TclscStatus tclsc_bleu(const uint32_t *cand_ids,
                            const size_t *cand_lens,
                            const uint32_t *ref_ids,
                            const size_t *ref_lens,
                            size_t count,
                            size_t max_n,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TCLSC_H */
