#ifndef MOTION_MOMENTS_H
#define MOTION_MOMENTS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MmStatus {
  MM_STATUS_OK = 0,
  MM_STATUS_NULL_POINTER = 1,
  MM_STATUS_INVALID_ARGUMENT = 2,
  MM_STATUS_FORMAT = 3,
  MM_STATUS_IO = 4,
  MM_STATUS_MOMENT = 5,
  MM_STATUS_RETRIEVAL = 6,
  MM_STATUS_BUFFER_TOO_SMALL = 7,
  MM_STATUS_PANIC = 8,
} MmStatus;

typedef enum MmLevel {
  MM_LEVEL_PATCH = 0,
  MM_LEVEL_FRAME = 1,
  MM_LEVEL_PATCH_DIFF = 2,
} MmLevel;

typedef enum MmFusion {
  MM_FUSION_CONCAT = 0,
  MM_FUSION_SUM = 1,
} MmFusion;

typedef struct MmConfig MmConfig;

typedef struct MmEmbedding MmEmbedding;

typedef struct MmIndex MmIndex;

typedef struct MmRankedList MmRankedList;

typedef struct MmTensor MmTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next `mm_*` call on the same thread.
 */
const char *mm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mm_version(void);

/**
 * Copies `frames * patches * dim` floats (frame-major, then patch) into a new tensor.
 */
enum MmStatus mm_tensor_new(const char *video_id,
                            size_t frames,
                            size_t patches,
                            size_t dim,
                            const float *data,
                            struct MmTensor **out);

enum MmStatus mm_tensor_load(const char *path, struct MmTensor **out);

enum MmStatus mm_tensor_save(const struct MmTensor *tensor, const char *path);

enum MmStatus mm_tensor_shape(const struct MmTensor *tensor,
                              size_t *frames,
                              size_t *patches,
                              size_t *dim);

void mm_tensor_free(struct MmTensor *tensor);

/**
 * Weights (1,8,4), patch level, concat fusion, per-moment normalization on.
 */
enum MmStatus mm_config_default(struct MmConfig **out);

/**
 * Parses `key=value;...` text or a label such as `(1,8,4)-patch-concat`.
 */
enum MmStatus mm_config_parse(const char *config_text, struct MmConfig **out);

enum MmStatus mm_config_set_weights(struct MmConfig *config, const double *weights, size_t count);

enum MmStatus mm_config_set_level(struct MmConfig *config, enum MmLevel level);

enum MmStatus mm_config_set_fusion(struct MmConfig *config, enum MmFusion fusion);

enum MmStatus mm_config_set_per_moment_normalize(struct MmConfig *config, bool enabled);

/**
 * Canonical config text. On `MM_STATUS_BUFFER_TOO_SMALL`, `needed` holds the size to retry with.
 */
enum MmStatus mm_config_canonical(const struct MmConfig *config,
                                  char *buf,
                                  size_t capacity,
                                  size_t *needed);

/**
 * Label such as `(1,8,4)-patch-concat`.
 */
enum MmStatus mm_config_label(const struct MmConfig *config,
                              char *buf,
                              size_t capacity,
                              size_t *needed);

void mm_config_free(struct MmConfig *config);

enum MmStatus mm_embed(const struct MmTensor *tensor,
                       const struct MmConfig *config,
                       struct MmEmbedding **out);

/**
 * Number of values in the embedding; 0 for a null handle.
 */
size_t mm_embedding_dim(const struct MmEmbedding *embedding);

/**
 * Copies the unit-norm vector into `values` (at least `mm_embedding_dim` doubles).
 */
enum MmStatus mm_embedding_values(const struct MmEmbedding *embedding,
                                  double *values,
                                  size_t capacity);

void mm_embedding_free(struct MmEmbedding *embedding);

/**
 * Builds an index from `count` embeddings; the embeddings stay owned by the caller.
 */
enum MmStatus mm_index_new(const struct MmEmbedding *const *embeddings,
                           size_t count,
                           struct MmIndex **out);

enum MmStatus mm_index_load(const char *path, struct MmIndex **out);

enum MmStatus mm_index_save(const struct MmIndex *index, const char *path);

/**
 * Number of videos; 0 for a null handle.
 */
size_t mm_index_len(const struct MmIndex *index);

/**
 * Embedding width; 0 for a null handle.
 */
size_t mm_index_dim(const struct MmIndex *index);

void mm_index_free(struct MmIndex *index);

/**
 * Ranks `pool` (or every other video when `pool` is null) against `query_id`,
 * best first, ties by index order.
 */
enum MmStatus mm_rank(const struct MmIndex *index,
                      const char *query_id,
                      const char *const *pool,
                      size_t pool_len,
                      struct MmRankedList **out);

/**
 * Number of ranked entries; 0 for a null handle.
 */
size_t mm_ranked_len(const struct MmRankedList *list);

/**
 * Entry `i`. The id pointer stays valid until the list is freed.
 */
enum MmStatus mm_ranked_get(const struct MmRankedList *list,
                            size_t i,
                            const char **video_id,
                            double *score);

void mm_ranked_free(struct MmRankedList *list);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOTION_MOMENTS_H */
