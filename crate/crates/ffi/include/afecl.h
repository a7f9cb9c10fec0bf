#ifndef AFECL_H
#define AFECL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AfeclStatus {
  AFECL_STATUS_OK = 0,
  AFECL_STATUS_NULL_POINTER = 1,
  AFECL_STATUS_INVALID_UTF8 = 2,
  AFECL_STATUS_CONFIG = 3,
  AFECL_STATUS_DATA = 4,
  AFECL_STATUS_NUMERIC = 5,
  AFECL_STATUS_BUFFER_TOO_SMALL = 6,
  AFECL_STATUS_IO = 7,
  AFECL_STATUS_PANIC = 8,
} AfeclStatus;

/**
 * A loaded dataset.
 */
typedef struct AfeclGraph AfeclGraph;

/**
 * A trained encoder with its final embeddings and loss trace.
 */
typedef struct AfeclModel AfeclModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *afecl_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next failing call on the same thread.
 */
const char *afecl_last_error(void);

/**
 * Loads a dataset directory into `*out`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AfeclStatus afecl_graph_load(const char *dir, struct AfeclGraph **out);

/**
 * # Safety
 * `graph` must be null or a handle from [`afecl_graph_load`], freed once.
 */
void afecl_graph_free(struct AfeclGraph *graph);

/**
 * Node, undirected edge and feature counts.
 *
 * # Safety
 * `graph` must be a live handle; output pointers may be null.
 */
enum AfeclStatus afecl_graph_shape(const struct AfeclGraph *graph,
                                   size_t *num_nodes,
                                   size_t *num_edges,
                                   size_t *num_features);

/**
 * Trains on `graph` with a JSON training config (`temperature` required,
 * a `data` key is ignored) and stores the model in `*out`.
 *
 * # Safety
 * `graph` must be a live handle, `config_json` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum AfeclStatus afecl_train(const struct AfeclGraph *graph,
                             const char *config_json,
                             struct AfeclModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`afecl_train`], freed once.
 */
void afecl_model_free(struct AfeclModel *model);

/**
 * Embedding matrix shape: one row per node.
 *
 * # Safety
 * `model` must be a live handle; `rows` and `cols` valid pointers.
 */
enum AfeclStatus afecl_model_embedding_shape(const struct AfeclModel *model,
                                             size_t *rows,
                                             size_t *cols);

/**
 * Copies the row-major embeddings into `buf`, which holds `len` doubles.
 *
 * # Safety
 * `model` must be a live handle and `buf` valid for `len` writes.
 */
enum AfeclStatus afecl_model_copy_embeddings(const struct AfeclModel *model,
                                             double *buf,
                                             size_t len);

/**
 * Loss of the last training epoch.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum AfeclStatus afecl_model_final_loss(const struct AfeclModel *model, double *out);

/**
 * Writes `params.json` and `params.bin` into `dir`.
 *
 * # Safety
 * `model` must be a live handle and `dir` a NUL-terminated string.
 */
enum AfeclStatus afecl_model_save(const struct AfeclModel *model, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFECL_H */
