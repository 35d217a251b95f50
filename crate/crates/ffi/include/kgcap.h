#ifndef KGCAP_H
#define KGCAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum KgcapStatus {
  KGCAP_STATUS_OK = 0,
  KGCAP_STATUS_NULL_POINTER = 1,
  KGCAP_STATUS_INVALID_UTF8 = 2,
  KGCAP_STATUS_PARSE = 3,
  KGCAP_STATUS_VALIDATION = 4,
  KGCAP_STATUS_LOOKUP = 5,
  KGCAP_STATUS_CONFIG = 6,
  KGCAP_STATUS_NUMERIC = 7,
  KGCAP_STATUS_IO = 8,
  KGCAP_STATUS_JSON = 9,
  KGCAP_STATUS_PANIC = 10,
} KgcapStatus;

/**
 * Knowledge graph handle.
 */
typedef struct KgcapGraph KgcapGraph;

/**
 * Caption model handle.
 */
typedef struct KgcapModel KgcapModel;

/**
 * Word vector store handle.
 */
typedef struct KgcapVectors KgcapVectors;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library on this thread.
 */
const char *kgcap_last_error(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void kgcap_string_free(char *s);

/**
 * Parses a CSV edge list (`relation,start,end[,weight]`).
 *
 * # Safety
 * `csv` must be a NUL-terminated string and `out` writable.
 */
enum KgcapStatus kgcap_graph_from_csv(const char *csv, struct KgcapGraph **out);

/**
 * Reads a CSV edge list from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum KgcapStatus kgcap_graph_load(const char *path, struct KgcapGraph **out);

/**
 * # Safety
 * `g` must be a live graph handle or null.
 */
void kgcap_graph_free(struct KgcapGraph *g);

/**
 * Number of distinct terms.
 *
 * # Safety
 * `g` must be a live graph handle and `out` writable.
 */
enum KgcapStatus kgcap_graph_term_count(const struct KgcapGraph *g, size_t *out);

/**
 * Number of distinct `(relation, pair)` edges.
 *
 * # Safety
 * `g` must be a live graph handle and `out` writable.
 */
enum KgcapStatus kgcap_graph_edge_count(const struct KgcapGraph *g, size_t *out);

/**
 * Terms within `max_hops` of `term` as a JSON array of
 * `{"term", "hops", "weight"}` objects, nearest first.
 *
 * # Safety
 * Pointers must be valid; the returned string is owned by the caller.
 */
enum KgcapStatus kgcap_graph_neighbors_json(const struct KgcapGraph *g,
                                            const char *term,
                                            size_t max_hops,
                                            char **out);

/**
 * Parses word vectors in text format (`word x1 x2 ...` per line).
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` writable.
 */
enum KgcapStatus kgcap_vectors_from_text(const char *text, struct KgcapVectors **out);

/**
 * Reads word vectors from a text file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum KgcapStatus kgcap_vectors_load(const char *path, struct KgcapVectors **out);

/**
 * # Safety
 * `v` must be a live vectors handle or null.
 */
void kgcap_vectors_free(struct KgcapVectors *v);

/**
 * # Safety
 * `v` must be a live vectors handle and `out` writable.
 */
enum KgcapStatus kgcap_vectors_len(const struct KgcapVectors *v, size_t *out);

/**
 * # Safety
 * `v` must be a live vectors handle and `out` writable.
 */
enum KgcapStatus kgcap_vectors_dim(const struct KgcapVectors *v, size_t *out);

/**
 * Copies the vector of `term` into `buf`, which must hold `len` values;
 * `len` must equal the store dimension.
 *
 * # Safety
 * `buf` must be writable for `len` doubles.
 */
enum KgcapStatus kgcap_vectors_get(const struct KgcapVectors *v,
                                   const char *term,
                                   double *buf,
                                   size_t len);

/**
 * `1 - cos(a, b)` clamped to `[0, 2]`; `1` when either vector is zero.
 *
 * # Safety
 * `a` and `b` must be readable for `len` doubles and `out` writable.
 */
enum KgcapStatus kgcap_cosine_distance(const double *a, const double *b, size_t len, double *out);

/**
 * Retrofits `v` to `g`. `settings_json` is null for defaults or an object
 * with optional `alpha`, `beta` (`inverse-degree`, `constant`,
 * `edge-weight`), `beta_value`, `max_iterations` and `tolerance`.
 *
 * # Safety
 * Handles must be live; `out` receives a new vectors handle.
 */
enum KgcapStatus kgcap_retrofit(const struct KgcapVectors *v,
                                const struct KgcapGraph *g,
                                const char *settings_json,
                                struct KgcapVectors **out);

/**
 * Expands detections into related terms. `detections_json` is an array of
 * `{"label", "confidence"}`; `config_json` is null for defaults. The
 * result is a JSON object with `objects`, `direct`, `indirect`, `scene`.
 *
 * # Safety
 * Handles must be live; the returned string is owned by the caller.
 */
enum KgcapStatus kgcap_term_sets_json(const struct KgcapGraph *g,
                                      const struct KgcapVectors *v,
                                      const char *detections_json,
                                      const char *config_json,
                                      char **out);

/**
 * Scores results given as JSON lines of `{"image_id", "candidate",
 * "references"}`. Returns the metric report as JSON.
 *
 * # Safety
 * `results_jsonl` must be a NUL-terminated string; the returned string is
 * owned by the caller.
 */
enum KgcapStatus kgcap_evaluate_json(const char *results_jsonl, char **out);

/**
 * Loads a model checkpoint written by `kgcap train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum KgcapStatus kgcap_model_load(const char *path, struct KgcapModel **out);

/**
 * # Safety
 * `m` must be a live model handle or null.
 */
void kgcap_model_free(struct KgcapModel *m);

/**
 * Beam-decodes one image. `terms_json` is null or an object with optional
 * `direct` and `indirect` term arrays, looked up in `v` (which may be
 * null when no terms are given). Returns a JSON array of
 * `{"caption", "logprob"}`, best first.
 *
 * # Safety
 * `feature` must be readable for `feature_len` doubles; the returned
 * string is owned by the caller.
 */
enum KgcapStatus kgcap_model_caption_json(const struct KgcapModel *m,
                                          const double *feature,
                                          size_t feature_len,
                                          const char *terms_json,
                                          const struct KgcapVectors *v,
                                          size_t beam_size,
                                          size_t max_length,
                                          char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGCAP_H */
