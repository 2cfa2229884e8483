#ifndef ANONSEARCH_H
#define ANONSEARCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AnsStatus {
  ANS_STATUS_OK = 0,
  ANS_STATUS_NULL_POINTER = 1,
  ANS_STATUS_INVALID_UTF8 = 2,
  ANS_STATUS_IO = 3,
  ANS_STATUS_PARSE = 4,
  ANS_STATUS_UNKNOWN_TERM = 5,
  ANS_STATUS_INVALID_ARGUMENT = 6,
  ANS_STATUS_INSUFFICIENT_CANDIDATES = 7,
  ANS_STATUS_INTERNAL = 8,
} AnsStatus;

// Opaque word-vector store.
typedef struct AnsEmbeddings AnsEmbeddings;

// Opaque inverted index.
typedef struct AnsIndex AnsIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next call on this thread.
const char *ans_last_error_message(void);

// # Safety
// `s` must come from this library, or be null.
void ans_string_free(char *s);

// Loads a GloVe-style text file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AnsStatus ans_embeddings_load(const char *path, struct AnsEmbeddings **out);

// # Safety
// `store` must come from `ans_embeddings_load`, or be null.
void ans_embeddings_free(struct AnsEmbeddings *store);

// # Safety
// `store` must be a live handle.
uintptr_t ans_embeddings_len(const struct AnsEmbeddings *store);

// # Safety
// `store` must be a live handle.
uintptr_t ans_embeddings_dim(const struct AnsEmbeddings *store);

// Opens a saved index or builds one from a JSON Lines corpus.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum AnsStatus ans_index_open(const char *path, struct AnsIndex **out);

// # Safety
// `index` must come from `ans_index_open`, or be null.
void ans_index_free(struct AnsIndex *index);

// # Safety
// `index` must be a live handle.
uintptr_t ans_index_doc_count(const struct AnsIndex *index);

// Decomposes `query` and writes
// `{"query","related","distractors","order","seed"}` as JSON to `out_json`.
//
// # Safety
// Pointers must be valid; `query` NUL-terminated.
enum AnsStatus ans_decompose(const struct AnsEmbeddings *store,
                             const char *query,
                             double sigma,
                             uintptr_t n_related,
                             uintptr_t m_distractors,
                             uintptr_t pool_size,
                             uint64_t seed,
                             char **out_json);

// Anonymity of `query` given a JSON array of transmitted terms.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum AnsStatus ans_anonymity(const struct AnsEmbeddings *store,
                             const char *query,
                             const char *terms_json,
                             double *out_alpha);

// Rebuilds the result set from a JSON array of related terms at threshold
// `l` and writes its reconstructability against `query`. Writes NaN when
// `query` matches no document.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum AnsStatus ans_reconstructability(const struct AnsIndex *index,
                                      const char *query,
                                      const char *related_json,
                                      uintptr_t l,
                                      double *out_rho);

// Clusters a JSON array of received terms into `k` groups and writes
// `{"standard": [..], "conservative": [..], "clusters": [[..], ..]}`.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum AnsStatus ans_attack(const struct AnsEmbeddings *store,
                          const char *terms_json,
                          uintptr_t k,
                          uint64_t seed,
                          char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANONSEARCH_H */
