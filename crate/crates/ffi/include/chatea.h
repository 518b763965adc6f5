#ifndef CHATEA_H
#define CHATEA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ChateaStatus {
  CHATEA_STATUS_OK = 0,
  CHATEA_STATUS_NULL_POINTER = 1,
  CHATEA_STATUS_INVALID_UTF8 = 2,
  CHATEA_STATUS_INVALID_ARGUMENT = 3,
  CHATEA_STATUS_IO = 4,
  CHATEA_STATUS_PARSE = 5,
  CHATEA_STATUS_UNKNOWN_ENTITY = 6,
  CHATEA_STATUS_NUMERIC = 7,
  CHATEA_STATUS_BACKEND = 8,
  CHATEA_STATUS_PANIC = 9,
} ChateaStatus;

/**
 * CSLS retrieval over a source and a target matrix.
 */
typedef struct ChateaCslsIndex ChateaCslsIndex;

/**
 * A dense row-major embedding matrix.
 */
typedef struct ChateaEmbeddings ChateaEmbeddings;

/**
 * A loaded knowledge graph.
 */
typedef struct ChateaKg ChateaKg;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *chatea_last_error(void);

/**
 * Library version as a static string.
 */
const char *chatea_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void chatea_string_free(char *s);

/**
 * Loads a graph from a triples file and an entity-name file.
 *
 * # Safety
 * Paths must be nul-terminated strings; `out` must be writable.
 */
enum ChateaStatus chatea_kg_load(const char *triples_path,
                                 const char *names_path,
                                 bool temporal,
                                 struct ChateaKg **out);

/**
 * # Safety
 * `kg` must be null or a handle from [`chatea_kg_load`] not yet freed.
 */
void chatea_kg_free(struct ChateaKg *kg);

/**
 * # Safety
 * `kg` must be a live handle; `entities` and `facts` must be writable.
 */
enum ChateaStatus chatea_kg_counts(const struct ChateaKg *kg, size_t *entities, size_t *facts);

/**
 * Renders the entity card (code literal, or key-value text when `code` is
 * false) with at most `tuple_cap` tuples. Free the result with
 * [`chatea_string_free`].
 *
 * # Safety
 * `kg` must be a live handle; `description` null or nul-terminated; `out` writable.
 */
enum ChateaStatus chatea_kg_card(const struct ChateaKg *kg,
                                 uint64_t entity_id,
                                 const char *description,
                                 size_t tuple_cap,
                                 bool code,
                                 char **out);

/**
 * Copies `rows * dim` doubles, row-major, into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * dim` readable doubles; `out` must be writable.
 */
enum ChateaStatus chatea_embeddings_new(const double *data,
                                        size_t rows,
                                        size_t dim,
                                        struct ChateaEmbeddings **out);

/**
 * # Safety
 * `m` must be null or a handle from [`chatea_embeddings_new`] not yet freed.
 */
void chatea_embeddings_free(struct ChateaEmbeddings *m);

/**
 * Builds a CSLS index with neighbourhood size `k`. The matrices are copied,
 * so they may be freed afterwards.
 *
 * # Safety
 * `src` and `tgt` must be live handles; `out` must be writable.
 */
enum ChateaStatus chatea_csls_new(const struct ChateaEmbeddings *src,
                                  const struct ChateaEmbeddings *tgt,
                                  size_t k,
                                  struct ChateaCslsIndex **out);

/**
 * # Safety
 * `index` must be null or a handle from [`chatea_csls_new`] not yet freed.
 */
void chatea_csls_free(struct ChateaCslsIndex *index);

/**
 * Writes the `scope` best target rows for source row `row`, best first.
 * `written` receives the count, which is below `scope` only when the
 * target side has fewer rows.
 *
 * # Safety
 * `index` must be a live handle; `rows_out` and `scores_out` must hold
 * `scope` elements; `written` must be writable.
 */
enum ChateaStatus chatea_csls_topk(const struct ChateaCslsIndex *index,
                                   size_t row,
                                   size_t scope,
                                   size_t *rows_out,
                                   double *scores_out,
                                   size_t *written);

/**
 * Parses the four similarity scores (name, description, structure, time)
 * from a model reply.
 *
 * # Safety
 * `reply` must be nul-terminated; `out` must hold 4 bytes.
 */
enum ChateaStatus chatea_parse_scores(const char *reply, uint8_t *out);

/**
 * Reads a `[YES]`/`[NO]` verdict. Lenient mode also accepts lowercase
 * brackets and bare uppercase words.
 *
 * # Safety
 * `reply` must be nul-terminated; `satisfied` must be writable.
 */
enum ChateaStatus chatea_parse_verdict(const char *reply, bool lenient, bool *satisfied);

/**
 * Hits@k and MRR over 1-based gold ranks; a rank of 0 marks a gold entity
 * missing from the ranking and counts as a miss.
 *
 * # Safety
 * `ranks` must hold `n` elements; `hits` and `mrr` must be writable.
 */
enum ChateaStatus chatea_metrics(const uint32_t *ranks,
                                 size_t n,
                                 size_t k,
                                 double *hits,
                                 double *mrr);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHATEA_H */
