#ifndef NOISECAP_H
#define NOISECAP_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NcStatus {
  NC_STATUS_OK = 0,
  NC_STATUS_NULL_POINTER = 1,
  NC_STATUS_INVALID_ARGUMENT = 2,
  NC_STATUS_IO = 3,
  NC_STATUS_FORMAT = 4,
  NC_STATUS_DIMENSION = 5,
  NC_STATUS_BUFFER_TOO_SMALL = 6,
  NC_STATUS_MODEL = 7,
  NC_STATUS_PANIC = 8,
} NcStatus;

/**
 * Caption decoder restored from a checkpoint.
 */
typedef struct NcModel NcModel;

/**
 * Loaded GDE1 embedding store.
 */
typedef struct NcStore NcStore;

/**
 * Deterministic synthetic text encoder over the grammar vocabulary.
 */
typedef struct NcTextEncoder NcTextEncoder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nc_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *nc_last_error(void);

/**
 * Loads a GDE1 file. `expected_dim` of 0 accepts any dimension.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum NcStatus nc_store_load(const char *path, size_t expected_dim, struct NcStore **out);

/**
 * Number of vectors, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t nc_store_len(const struct NcStore *store);

/**
 * Vector dimension, or 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t nc_store_dim(const struct NcStore *store);

/**
 * Copies vector `index` into `out` (capacity `cap` floats).
 *
 * # Safety
 * `store` must be a live handle; `out` must hold `cap` floats.
 */
enum NcStatus nc_store_vector(const struct NcStore *store, size_t index, float *out, size_t cap);

/**
 * Copies the id of vector `index` into `buf`.
 *
 * # Safety
 * `store` must be a live handle; `buf` must hold `cap` bytes; `written` may be null.
 */
enum NcStatus nc_store_id(const struct NcStore *store,
                          size_t index,
                          char *buf,
                          size_t cap,
                          size_t *written);

/**
 * # Safety
 * `store` must be null or a handle not yet freed.
 */
void nc_store_free(struct NcStore *store);

/**
 * Text encoder with the default configuration over the grammar vocabulary.
 *
 * # Safety
 * `out` must be writable.
 */
enum NcStatus nc_text_encoder_new(struct NcTextEncoder **out);

/**
 * # Safety
 * `enc` must be null or a live handle.
 */
size_t nc_text_encoder_dim(const struct NcTextEncoder *enc);

/**
 * Embeds `text` (words of the grammar vocabulary) into `out`.
 *
 * # Safety
 * `enc` must be a live handle, `text` NUL-terminated, `out` must hold `cap` floats.
 */
enum NcStatus nc_text_encoder_encode(const struct NcTextEncoder *enc,
                                     const char *text,
                                     float *out,
                                     size_t cap);

/**
 * # Safety
 * `enc` must be null or a handle not yet freed.
 */
void nc_text_encoder_free(struct NcTextEncoder *enc);

/**
 * Restores a decoder from a checkpoint written for the grammar vocabulary.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum NcStatus nc_model_load(const char *path, struct NcModel **out);

/**
 * Conditioning dimension the model expects, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t nc_model_embed_dim(const struct NcModel *model);

/**
 * Decodes a caption for `embedding` (length `len`). `beam_width` 0 selects
 * greedy decoding. The caption is written space-separated, without bos/eos.
 *
 * # Safety
 * `model` must be a live handle, `embedding` must hold `len` floats,
 * `buf` must hold `cap` bytes and `written` may be null.
 */
enum NcStatus nc_model_caption(const struct NcModel *model,
                               const float *embedding,
                               size_t len,
                               size_t beam_width,
                               char *buf,
                               size_t cap,
                               size_t *written);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void nc_model_free(struct NcModel *model);

/**
 * ε estimate over `n_groups` caption groups. `values` holds the vectors
 * row-major (`dim` floats each), groups back to back with sizes `group_sizes`.
 *
 * # Safety
 * `values` must hold `sum(group_sizes) * dim` floats, `group_sizes` must
 * hold `n_groups` entries and `out` must be writable.
 */
enum NcStatus nc_estimate_epsilon(const float *values,
                                  const size_t *group_sizes,
                                  size_t n_groups,
                                  size_t dim,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOISECAP_H */
