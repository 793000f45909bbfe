#ifndef EKP_H
#define EKP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EkpCorpusKind {
  EKP_CORPUS_KIND_OPEN_CLOZE = 0,
  EKP_CORPUS_KIND_MULTIPLE_CHOICE = 1,
} EkpCorpusKind;

typedef enum EkpFamily {
  EKP_FAMILY_LEFT_TO_RIGHT = 0,
  EKP_FAMILY_SEQ_TO_SEQ = 1,
} EkpFamily;

typedef enum EkpStatus {
  EKP_STATUS_OK = 0,
  EKP_STATUS_NULL_ARGUMENT = 1,
  EKP_STATUS_INVALID_UTF8 = 2,
  EKP_STATUS_CORPUS = 3,
  EKP_STATUS_BACKEND = 4,
  EKP_STATUS_INJECTION = 5,
  EKP_STATUS_HARNESS = 6,
  EKP_STATUS_INVALID_ARGUMENT = 7,
  EKP_STATUS_PANIC = 99,
} EkpStatus;

/**
 * Loaded probe corpus.
 */
typedef struct EkpCorpus EkpCorpus;

/**
 * A language model behind the scoring contract.
 */
typedef struct EkpModel EkpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on this thread.
 */
const char *ekp_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void ekp_string_free(char *s);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EkpStatus ekp_corpus_load(const char *path,
                               enum EkpCorpusKind kind,
                               struct EkpCorpus **out_corpus);

/**
 * Seeded synthetic suite with three probes per entity.
 *
 * # Safety
 * `out_corpus` must be a valid pointer.
 */
enum EkpStatus ekp_corpus_synthetic(enum EkpCorpusKind kind,
                                    size_t entities,
                                    uint64_t seed,
                                    struct EkpCorpus **out_corpus);

/**
 * New corpus holding the examples whose gold span occurs in the definition.
 *
 * # Safety
 * `corpus` must come from this library; `out_corpus` must be valid.
 */
enum EkpStatus ekp_corpus_filter_easy(const struct EkpCorpus *corpus,
                                      struct EkpCorpus **out_corpus);

/**
 * Number of probe examples; 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or come from this library.
 */
size_t ekp_corpus_len(const struct EkpCorpus *corpus);

/**
 * Number of distinct entities the examples refer to.
 *
 * # Safety
 * `corpus` must be null or come from this library.
 */
size_t ekp_corpus_entity_count(const struct EkpCorpus *corpus);

/**
 * # Safety
 * `corpus` must be null or come from this library, freed once.
 */
void ekp_corpus_free(struct EkpCorpus *corpus);

/**
 * Uniform table model over `k` tokens.
 *
 * # Safety
 * `out_model` must be a valid pointer.
 */
enum EkpStatus ekp_model_uniform(size_t k, struct EkpModel **out_model);

/**
 * Table model from a TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_model` must be valid.
 */
enum EkpStatus ekp_model_table_load(const char *path, struct EkpModel **out_model);

/**
 * Small trainable model whose vocabulary covers every text in `corpus`.
 *
 * # Safety
 * `corpus` must come from this library; `out_model` must be valid.
 */
enum EkpStatus ekp_model_tiny(const struct EkpCorpus *corpus,
                              enum EkpFamily family,
                              uint64_t init_seed,
                              struct EkpModel **out_model);

/**
 * Per-token perplexity of `span` at the single `<MASK>` of `probe`.
 *
 * # Safety
 * `model` must come from this library; strings must be NUL-terminated;
 * `out_perplexity` must be valid.
 */
enum EkpStatus ekp_model_perplexity(const struct EkpModel *model,
                                    const char *probe,
                                    const char *span,
                                    double *out_perplexity);

/**
 * # Safety
 * `model` must be null or come from this library, freed once.
 */
void ekp_model_free(struct EkpModel *model);

/**
 * Token-set Jaccard similarity.
 *
 * # Safety
 * `a` and `b` must be NUL-terminated; `out_value` must be valid.
 */
enum EkpStatus ekp_jaccard(const char *a, const char *b, double *out_value);

/**
 * ROUGE-L F-measure.
 *
 * # Safety
 * `a` and `b` must be NUL-terminated; `out_value` must be valid.
 */
enum EkpStatus ekp_rouge_l(const char *a, const char *b, double *out_value);

/**
 * Subject / relation / object form of a masked sentence about an entity,
 * as JSON: `{"subject":..,"relation":..,"object":..}` or `{"filtered":..}`.
 *
 * # Safety
 * Strings must be NUL-terminated; `out_json` must be valid. The result
 * must be released with [`ekp_string_free`].
 */
enum EkpStatus ekp_convert_to_sro(const char *entity_name,
                                  const char *definition,
                                  const char *sentence,
                                  const char *gold,
                                  char **out_json);

/**
 * Validation report of a spec file, one problem per line; empty when
 * the spec is usable.
 *
 * # Safety
 * `spec_path` must be NUL-terminated; `out_report` must be valid. The
 * result must be released with [`ekp_string_free`].
 */
enum EkpStatus ekp_validate_spec(const char *spec_path, char **out_report);

/**
 * Run an experiment spec with the in-tree runtimes, writing results to
 * its output directory.
 *
 * # Safety
 * `spec_path` must be NUL-terminated; the count pointers must be valid.
 */
enum EkpStatus ekp_run_experiment(const char *spec_path, size_t *out_records, size_t *out_errors);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EKP_H */
