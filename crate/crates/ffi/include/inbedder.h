#ifndef INBEDDER_H
#define INBEDDER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum InbStatus {
  INB_STATUS_OK = 0,
  INB_STATUS_NULL_POINTER = 1,
  INB_STATUS_INVALID_UTF8 = 2,
  INB_STATUS_INVALID_ARGUMENT = 3,
  INB_STATUS_DIMENSION_MISMATCH = 4,
  INB_STATUS_DEGENERATE = 5,
  INB_STATUS_BUFFER_TOO_SMALL = 6,
  INB_STATUS_BACKEND = 7,
  INB_STATUS_IO = 8,
  INB_STATUS_PANIC = 9,
} InbStatus;

/**
 * A backend plus prompt template, ready to embed.
 */
typedef struct InbEngine InbEngine;

/**
 * A decoded generation record.
 */
typedef struct InbRecord InbRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *inb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *inb_version(void);

/**
 * # Safety
 * `a` and `b` point to `dim` doubles; `out` is writable.
 */
enum InbStatus inb_cosine(const double *a, const double *b, size_t dim, double *out);

/**
 * # Safety
 * `out` is writable.
 */
enum InbStatus inb_harmonic_mean(double a, double b, double *out);

/**
 * # Safety
 * `x` and `y` point to `n` doubles; `out` is writable.
 */
enum InbStatus inb_spearman(const double *x, const double *y, size_t n, double *out);

/**
 * # Safety
 * `truth` and `pred` point to `n` labels; `out` is writable.
 */
enum InbStatus inb_v_measure(const uint32_t *truth,
                             const uint32_t *pred,
                             size_t n,
                             double beta,
                             double *out);

/**
 * Seeded k-means over `n` row-major points of `dim` doubles.
 *
 * # Safety
 * `points` holds `n * dim` doubles, `labels_out` room for `n` labels;
 * `inertia_out` may be NULL.
 */
enum InbStatus inb_kmeans(const double *points,
                          size_t n,
                          size_t dim,
                          size_t k,
                          uint64_t seed,
                          uint32_t *labels_out,
                          double *inertia_out);

/**
 * Parses a generation record in the wire JSON format.
 *
 * # Safety
 * `json` is a NUL-terminated string; `out` is writable.
 */
enum InbStatus inb_record_from_json(const char *json, struct InbRecord **out);

/**
 * # Safety
 * `record` came from [`inb_record_from_json`] or is NULL.
 */
void inb_record_free(struct InbRecord *record);

/**
 * # Safety
 * `record` is a live handle.
 */
size_t inb_record_dim(const struct InbRecord *record);

/**
 * Pools a record with a direct method (`avg-gen`, `avg-ppt`, `1st-gen`,
 * `last-gen`, `avg-all`). `*written` receives the dimension even when the
 * buffer is too small.
 *
 * # Safety
 * `record` is a live handle, `method` a NUL-terminated string, `out` holds
 * `cap` doubles; `written` may be NULL.
 */
enum InbStatus inb_aggregate(const struct InbRecord *record,
                             const char *method,
                             int64_t layer,
                             double *out,
                             size_t cap,
                             size_t *written);

/**
 * Opens a backend from `synthetic:FILE`, `replay:FILE` or an http(s) URL.
 *
 * # Safety
 * `backend` is a NUL-terminated string, `template_path` one or NULL; `out`
 * is writable.
 */
enum InbStatus inb_engine_open(const char *backend,
                               const char *template_path,
                               struct InbEngine **out);

/**
 * # Safety
 * `engine` came from [`inb_engine_open`] or is NULL.
 */
void inb_engine_free(struct InbEngine *engine);

/**
 * Embeds `input` under `instruction`. `spec_json` is an encoding spec such as
 * `{"method":"re-enc"}`, or NULL for greedy `avg-gen` at the last layer.
 *
 * # Safety
 * `engine` is a live handle; strings are NUL-terminated; `out` holds `cap`
 * doubles; `written` may be NULL.
 */
enum InbStatus inb_engine_embed(const struct InbEngine *engine,
                                const char *input,
                                const char *instruction,
                                const char *spec_json,
                                double *out,
                                size_t cap,
                                size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INBEDDER_H */
