#ifndef MODELREC_H
#define MODELREC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every entry point.
typedef enum MrecStatus {
  MREC_STATUS_OK = 0,
  // A required pointer argument was NULL.
  MREC_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8 or JSON input was malformed.
  MREC_STATUS_INVALID_INPUT = 2,
  // A file could not be read or written.
  MREC_STATUS_IO = 3,
  // A checkpoint or corpus file is corrupt or of the wrong version.
  MREC_STATUS_FORMAT = 4,
  // A candidate model is unknown to the checkpoint.
  MREC_STATUS_UNKNOWN_MODEL = 5,
  // A value was produced that is NaN or infinite.
  MREC_STATUS_NUMERIC = 6,
  // A Rust panic was caught at the boundary.
  MREC_STATUS_PANIC = 7,
} MrecStatus;

// A loaded checkpoint ready for inference.
typedef struct MrecRecommender MrecRecommender;

// Library version as a static NUL-terminated string.
const char *mrec_version(void);

// Message of the most recent failure on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *mrec_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must be NULL or a string produced by this library and not yet freed.
void mrec_string_free(char *s);

// Loads a checkpoint file and prepares it for inference.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MrecStatus mrec_recommender_open(const char *path, struct MrecRecommender **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `h` must be NULL or a handle from [`mrec_recommender_open`] not yet freed.
void mrec_recommender_free(struct MrecRecommender *h);

// Number of models that can be ranked without extra metadata.
//
// # Safety
// `h` must be a valid handle; `out` must be writable.
enum MrecStatus mrec_recommender_model_count(struct MrecRecommender *h, size_t *out);

// Reads the softmax temperature.
//
// # Safety
// `h` must be a valid handle; `out` must be writable.
enum MrecStatus mrec_recommender_get_tau(struct MrecRecommender *h, double *out);

// Overrides the temperature. Rankings do not change; scores rescale.
//
// # Safety
// `h` must be a valid handle.
enum MrecStatus mrec_recommender_set_tau(struct MrecRecommender *h, double tau);

// Ranks models for a dataset known only by its description and writes the
// top `k` as a JSON array of `{model_key, s_tilde, z_hat}` to `out_json`.
//
// `candidates_json` may be NULL (rank every known model) or a JSON array of
// model keys and/or model metadata objects.
//
// # Safety
// `h` must be a valid handle; string arguments NUL-terminated;
// `out_json` writable.
enum MrecStatus mrec_recommend_top_k(struct MrecRecommender *h,
                                     const char *description,
                                     const char *task,
                                     const char *metric,
                                     const char *candidates_json,
                                     size_t k,
                                     char **out_json);

// Scores `n` known models (by key) for a described dataset, writing the
// temperature-scaled scores to `out_scores` in input order.
//
// # Safety
// `keys` must point to `n` NUL-terminated strings and `out_scores` to `n`
// writable doubles.
enum MrecStatus mrec_score(struct MrecRecommender *h,
                           const char *description,
                           const char *task,
                           const char *metric,
                           const char *const *keys,
                           size_t n,
                           double *out_scores);

// Evaluates the checkpoint on a corpus file and writes the ranking report
// as JSON.
//
// # Safety
// `ks` must point to `n_ks` values; other pointers as for the other calls.
enum MrecStatus mrec_evaluate(struct MrecRecommender *h,
                              const char *corpus_path,
                              const size_t *ks,
                              size_t n_ks,
                              char **out_json);

// Replaces each pool member by a comparable-scale recommended model.
// `pool_json` and `catalog_json` are JSON arrays of
// `{"model", "scale", "availability"?}`; `require_tag` may be NULL.
//
// # Safety
// String arguments NUL-terminated (except the optional NULL tag);
// `out_json` writable.
enum MrecStatus mrec_replace_pool(struct MrecRecommender *h,
                                  const char *pool_json,
                                  const char *catalog_json,
                                  const char *description,
                                  const char *task,
                                  const char *metric,
                                  size_t tolerance,
                                  const char *require_tag,
                                  char **out_json);

// Writes the probe of the learned size/family prior as JSON.
//
// # Safety
// `h` must be a valid handle; `out_json` writable.
enum MrecStatus mrec_probe_prior(struct MrecRecommender *h, char **out_json);

#endif  /* MODELREC_H */
