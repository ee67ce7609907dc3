#ifndef ADVSCALE_H
#define ADVSCALE_H

#include <stdbool.h>
#include <stddef.h>

typedef enum {
  ADVSCALE_STATUS_OK = 0,
  ADVSCALE_STATUS_NULL_ARGUMENT = 1,
  ADVSCALE_STATUS_INVALID_UTF8 = 2,
  ADVSCALE_STATUS_CONFIG = 3,
  ADVSCALE_STATUS_TRAINING = 4,
  ADVSCALE_STATUS_CONTRACT = 5,
  ADVSCALE_STATUS_IO = 6,
  ADVSCALE_STATUS_RUNTIME = 7,
  ADVSCALE_STATUS_BUFFER_TOO_SMALL = 8,
  ADVSCALE_STATUS_PANIC = 9,
} AdvscaleStatus;

/**
 * Model pools of each kind inside a lab.
 */
typedef enum {
  ADVSCALE_POOL_SURROGATE = 0,
  ADVSCALE_POOL_HELDOUT = 1,
  ADVSCALE_POOL_HELDOUT_AT = 2,
} AdvscalePool;

/**
 * A dataset together with a trained or loaded zoo.
 */
typedef struct AdvscaleLab AdvscaleLab;

/**
 * A finished Monte Carlo check of ensemble-minimizer asymptotics.
 */
typedef struct AdvscaleTheory AdvscaleTheory;

/**
 * Per-image outcome of an attack.
 */
typedef struct {
  double surrogate_asr;
  double heldout_asr;
  double linf;
  size_t steps_run;
} AdvscaleAttackOutcome;

typedef struct {
  double alpha;
  double intercept;
  double r_squared;
  size_t n_points;
} AdvscaleFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *advscale_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *advscale_version(void);

/**
 * Generates the dataset and builds (or, with `zoo_path`, loads) the zoo
 * described by a run-config JSON document. Null or empty selects defaults.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
AdvscaleStatus advscale_lab_create(const char *config_json, AdvscaleLab **out);

/**
 * # Safety
 * `lab` must be null or a handle from [`advscale_lab_create`] not yet freed.
 */
void advscale_lab_free(AdvscaleLab *lab);

/**
 * Number of models in `pool`.
 *
 * # Safety
 * `lab` must be a live handle; `out` a valid pointer.
 */
AdvscaleStatus advscale_lab_pool_size(const AdvscaleLab *lab, AdvscalePool pool, size_t *out);

/**
 * Pixel count of one image and the number of test images.
 *
 * # Safety
 * `lab` must be a live handle; both outputs valid pointers.
 */
AdvscaleStatus advscale_lab_dims(const AdvscaleLab *lab, size_t *image_len, size_t *test_count);

/**
 * Copies test image `index` into `buf` (`len` ≥ image length) and its label into `label`.
 *
 * # Safety
 * `lab` must be a live handle; `buf` must hold `len` doubles; `label` valid.
 */
AdvscaleStatus advscale_lab_test_image(const AdvscaleLab *lab,
                                       size_t index,
                                       double *buf,
                                       size_t len,
                                       size_t *label);

/**
 * Attacks test image `index` towards `target` with the first `ensemble_size`
 * surrogates. `attack_json` holds an attack config (null or empty for
 * defaults). The adversarial image is written to `adv` when it is non-null.
 *
 * # Safety
 * `lab` must be a live handle; `adv` null or holding `adv_len` doubles;
 * `outcome` a valid pointer.
 */
AdvscaleStatus advscale_lab_attack(const AdvscaleLab *lab,
                                   const char *attack_json,
                                   size_t ensemble_size,
                                   size_t index,
                                   size_t target,
                                   double *adv,
                                   size_t adv_len,
                                   AdvscaleAttackOutcome *outcome);

/**
 * Least-squares fit of `asr = α ln t + C` over `n` points.
 *
 * # Safety
 * `t` and `asr` must each hold `n` doubles; `out` must be valid.
 */
AdvscaleStatus advscale_fit(const double *t, const double *asr, size_t n, AdvscaleFit *out);

/**
 * Runs the Monte Carlo check configured by `config_json` (null or empty for defaults).
 *
 * # Safety
 * `config_json` must be null or NUL-terminated; `out` must be valid.
 */
AdvscaleStatus advscale_theory_run(const char *config_json, AdvscaleTheory **out);

/**
 * # Safety
 * `theory` must be null or a handle from [`advscale_theory_run`] not yet freed.
 */
void advscale_theory_free(AdvscaleTheory *theory);

/**
 * Whether every check passed, and the pooled chi-square mean against its target.
 *
 * # Safety
 * `theory` must be a live handle; outputs valid pointers.
 */
AdvscaleStatus advscale_theory_summary(const AdvscaleTheory *theory,
                                       bool *passed,
                                       double *chi_mean,
                                       double *chi_target_mean);

/**
 * The full report as JSON in a string owned by the caller; release it with
 * [`advscale_string_free`].
 *
 * # Safety
 * `theory` must be a live handle; `out` must be valid.
 */
AdvscaleStatus advscale_theory_report_json(const AdvscaleTheory *theory, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void advscale_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADVSCALE_H */
