#ifndef DCNAS_H
#define DCNAS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum DcnasStatus {
  DCNAS_STATUS_OK = 0,
  DCNAS_STATUS_NULL_POINTER = 1,
  DCNAS_STATUS_INVALID_UTF8 = 2,
  DCNAS_STATUS_CONFIG = 3,
  DCNAS_STATUS_ARGUMENT = 4,
  DCNAS_STATUS_PARSE = 5,
  DCNAS_STATUS_DIVERGENCE = 6,
  DCNAS_STATUS_MISSING_EPOCH = 7,
  DCNAS_STATUS_IO = 8,
  DCNAS_STATUS_SERIALIZATION = 9,
  // A value does not fit the C type, e.g. an arch index above 2^64.
  DCNAS_STATUS_OVERFLOW = 10,
  DCNAS_STATUS_PANIC = 11,
} DcnasStatus;

// An experiment configuration.
typedef struct DcnasConfig DcnasConfig;

// A search space.
typedef struct DcnasSpace DcnasSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *dcnas_version(void);

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on this thread.
const char *dcnas_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void dcnas_string_free(char *s);

// Channel-ratio space with `ratio_count` ratios per layer.
//
// # Safety
// `ratios` must point to `ratio_count` doubles; `out` must be writable.
enum DcnasStatus dcnas_space_new_toy(size_t depth,
                                     const double *ratios,
                                     size_t ratio_count,
                                     size_t base_channels,
                                     size_t channels,
                                     size_t height,
                                     size_t width,
                                     size_t num_classes,
                                     struct DcnasSpace **out);

// Layer-wise space; `ops` is a comma-separated op list such as
// `"skip,k3e1,k3e3"`.
//
// # Safety
// `ops` must be a nul-terminated string; `out` must be writable.
enum DcnasStatus dcnas_space_new_layerwise(size_t num_blocks,
                                           const char *ops,
                                           size_t stem_channels,
                                           size_t channels,
                                           size_t height,
                                           size_t width,
                                           size_t num_classes,
                                           struct DcnasSpace **out);

// Releases a space. Null is ignored.
//
// # Safety
// `space` must come from this library and not be freed twice.
void dcnas_space_free(struct DcnasSpace *space);

// Number of architectures; fails with `OVERFLOW` above 2^64 (use
// [`dcnas_space_size_f64`] then).
//
// # Safety
// `space` must be a live handle; `out` must be writable.
enum DcnasStatus dcnas_space_size(const struct DcnasSpace *space, uint64_t *out);

// Number of architectures as a double.
//
// # Safety
// `space` must be a live handle; `out` must be writable.
enum DcnasStatus dcnas_space_size_f64(const struct DcnasSpace *space, double *out);

// Index of the architecture written as `text`.
//
// # Safety
// `space` must be a live handle, `text` nul-terminated, `out` writable.
enum DcnasStatus dcnas_space_parse_arch(const struct DcnasSpace *space,
                                        const char *text,
                                        uint64_t *out);

// Canonical text of architecture `index`; free with
// [`dcnas_string_free`].
//
// # Safety
// `space` must be a live handle; `out` must be writable.
enum DcnasStatus dcnas_space_format_arch(const struct DcnasSpace *space,
                                         uint64_t index,
                                         char **out);

// Parameter count and multiply-accumulate count of architecture `index`.
//
// # Safety
// `space` must be a live handle; both outputs must be writable.
enum DcnasStatus dcnas_space_arch_cost(const struct DcnasSpace *space,
                                       uint64_t index,
                                       uint64_t *params,
                                       uint64_t *flops);

// Configuration with every field at its default.
//
// # Safety
// `out` must be writable.
enum DcnasStatus dcnas_config_default(struct DcnasConfig **out);

// Parses and validates a JSON configuration; missing fields take their
// defaults.
//
// # Safety
// `json` must be nul-terminated; `out` must be writable.
enum DcnasStatus dcnas_config_from_json(const char *json, struct DcnasConfig **out);

// JSON text of a configuration; free with [`dcnas_string_free`].
//
// # Safety
// `config` must be a live handle; `out` must be writable.
enum DcnasStatus dcnas_config_to_json(const struct DcnasConfig *config, char **out);

// Releases a configuration. Null is ignored.
//
// # Safety
// `config` must come from this library and not be freed twice.
void dcnas_config_free(struct DcnasConfig *config);

// Runs the search for `seed`. `out_dir` may be null for an in-memory
// run; otherwise artifacts are written there and finished stages are
// resumed. The summary JSON is returned through `summary_json`.
//
// # Safety
// `config` must be a live handle, `out_dir` null or nul-terminated and
// `summary_json` writable.
enum DcnasStatus dcnas_run_pipeline(const struct DcnasConfig *config,
                                    uint64_t seed,
                                    const char *out_dir,
                                    char **summary_json);

// k-means on `n` row-major points of dimension `dim`. Writes `n` cluster
// labels and the final inertia.
//
// # Safety
// `points` must hold `n * dim` doubles and `assignments` room for `n`
// labels; `inertia` must be writable.
enum DcnasStatus dcnas_kmeans(const double *points,
                              size_t n,
                              size_t dim,
                              size_t k,
                              uint64_t seed,
                              size_t *assignments,
                              double *inertia);

// Ranking score between early scores `e` and accuracies `y` (length
// `n`): `normalized` in `[-1, 1]` with `+1` for perfect agreement, and
// the raw pairwise sign sum.
//
// # Safety
// `e` and `y` must hold `n` doubles; outputs must be writable.
enum DcnasStatus dcnas_ranking_score(const double *e,
                                     const double *y,
                                     size_t n,
                                     double *normalized,
                                     int64_t *raw);

// Mean squared difference between `e` and `y`.
//
// # Safety
// `e` and `y` must hold `n` doubles; `out` must be writable.
enum DcnasStatus dcnas_fidelity_mse(const double *e, const double *y, size_t n, double *out);

// Cosine similarity of two equal-length vectors, 0 when either is zero.
//
// # Safety
// `a` and `b` must hold `n` floats; `out` must be writable.
enum DcnasStatus dcnas_cosine_drift(const float *a, const float *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCNAS_H */
