/* C ABI for the frk library: frequency-regularized network parameters.
 *
 * Conventions:
 *  - FrkModel is an opaque handle owned by this library.
 *  - Fallible calls return an int32_t status; FRK_OK (0) means success.
 *    On failure, frk_last_error() returns a thread-local message that stays
 *    valid until the next failing call on the same thread.
 *  - char* values returned through out-parameters are heap-allocated and
 *    must be released with frk_string_free().
 */

#ifndef FRK_H
#define FRK_H

#include <stdint.h>
#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

enum FrkStatus {
  FRK_OK = 0,
  FRK_ERR_INTERNAL = 1,
  FRK_ERR_IO_PARSE = 2,
  FRK_ERR_VALIDATION = 3,
  FRK_ERR_USAGE = 4,
  FRK_ERR_NULL_POINTER = 5,
};

typedef struct FrkModel FrkModel;

/* Library version as a static string; do not free. */
const char *frk_version(void);

/* Message for the most recent error on this thread; do not free. */
const char *frk_last_error(void);

/* Releases a string returned through an out-parameter. */
void frk_string_free(char *s);

/* Builds a He-initialized frequency-regularized model.
 * arch: "alexnet" | "efficientnetb0" | "lenet5". */
int32_t frk_model_build(const char *arch, uint32_t num_classes, uint64_t seed,
                        FrkModel **out);

/* Loads a model from a checkpoint directory written by frk_model_save. */
int32_t frk_model_load(const char *dir, FrkModel **out);

void frk_model_free(FrkModel *model);

int32_t frk_model_param_total(const FrkModel *model, uint64_t *out);
int32_t frk_model_kept_total(const FrkModel *model, uint64_t *out);

/* Keeps max(1, ceil(keep_fraction * size)) zigzag-prefix coefficients per
 * parameter. keep_fraction must lie in (0, 1]. */
int32_t frk_model_truncate_fraction(FrkModel *model, double keep_fraction);

/* Keeps exactly keep_total coefficients over the whole model, apportioned
 * across parameters proportionally to size (minimum 1 each). */
int32_t frk_model_truncate_total(FrkModel *model, uint64_t keep_total);

/* Writes parameter files, manifest.json, and architecture.json. */
int32_t frk_model_save(const FrkModel *model, const char *dir);

/* JSON compression report; *out must be freed with frk_string_free. */
int32_t frk_model_compression_report(const FrkModel *model, char **out);

/* Eval-mode forward pass on one input laid out row-major for the model's
 * canonical input shape (e.g. 1x1x32x32 = 1024 doubles for lenet5);
 * out receives out_len logits. */
int32_t frk_model_forward(const FrkModel *model, const double *input,
                          size_t len, double *out, size_t out_len);

/* Scores a prediction JSON against 5-reference ground-truth JSON; *out
 * receives the report JSON and must be freed with frk_string_free. */
int32_t frk_evaluate_files(const char *test_json, const char *prediction_json,
                           char **out);

#ifdef __cplusplus
}
#endif

#endif /* FRK_H */
