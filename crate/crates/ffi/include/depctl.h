#ifndef DEPCTL_H
#define DEPCTL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum DepctlStatus {
  DEPCTL_STATUS_OK = 0,
  DEPCTL_STATUS_NULL_POINTER = 1,
  DEPCTL_STATUS_INVALID_UTF8 = 2,
  DEPCTL_STATUS_CONFIG = 3,
  DEPCTL_STATUS_PARAMETER_DOMAIN = 4,
  DEPCTL_STATUS_DOMAIN = 5,
  DEPCTL_STATUS_CONTRACT = 6,
  DEPCTL_STATUS_RESAMPLE_POLICY = 7,
  DEPCTL_STATUS_IO = 8,
  DEPCTL_STATUS_PANIC = 9,
} DepctlStatus;

typedef enum DepctlVerdict {
  DEPCTL_VERDICT_HOLDS = 0,
  DEPCTL_VERDICT_FAILS = 1,
  DEPCTL_VERDICT_INCONCLUSIVE = 2,
  DEPCTL_VERDICT_COMPLETED = 3,
} DepctlVerdict;

/**
 * Marginal law parsed from its JSON form.
 */
typedef struct DepctlDistribution DepctlDistribution;

/**
 * Validated experiment config.
 */
typedef struct DepctlExperiment DepctlExperiment;

/**
 * Counter-based random stream.
 */
typedef struct DepctlStream DepctlStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *depctl_last_error(void);

/**
 * Library version as a static string.
 */
const char *depctl_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void depctl_string_free(char *s);

/**
 * # Safety
 * `label` must be a nul-terminated string; `out` must be writable.
 */
enum DepctlStatus depctl_stream_new(uint64_t seed, const char *label, struct DepctlStream **out);

/**
 * Child stream identified by `label`; the parent is unchanged.
 *
 * # Safety
 * `stream` must be a live handle, `label` nul-terminated and `out` writable.
 */
enum DepctlStatus depctl_stream_derive(const struct DepctlStream *stream,
                                       const char *label,
                                       struct DepctlStream **out);

/**
 * Independent substream `index`, as used for per-path parallelism.
 *
 * # Safety
 * `stream` must be a live handle and `out` writable.
 */
enum DepctlStatus depctl_stream_substream(const struct DepctlStream *stream,
                                          uint64_t index,
                                          struct DepctlStream **out);

/**
 * Next uniform in (0, 1).
 *
 * # Safety
 * `stream` must be a live handle and `out` writable.
 */
enum DepctlStatus depctl_stream_uniform(struct DepctlStream *stream, double *out);

/**
 * # Safety
 * `stream` must be null or a handle not yet freed.
 */
void depctl_stream_free(struct DepctlStream *stream);

/**
 * Parses a law such as `{"family":"pareto1","alpha":2.0,"xm":1.0}`.
 *
 * # Safety
 * `json` must be nul-terminated and `out` writable.
 */
enum DepctlStatus depctl_distribution_from_json(const char *json, struct DepctlDistribution **out);

/**
 * Fills `out[0..n]` with draws, advancing `stream`.
 *
 * # Safety
 * Handles must be live and `out` must have room for `n` doubles.
 */
enum DepctlStatus depctl_distribution_sample(const struct DepctlDistribution *dist,
                                             struct DepctlStream *stream,
                                             double *out,
                                             uintptr_t n);

/**
 * # Safety
 * `dist` must be a live handle and `out` writable.
 */
enum DepctlStatus depctl_distribution_cdf(const struct DepctlDistribution *dist,
                                          double x,
                                          double *out);

/**
 * # Safety
 * `dist` must be a live handle and `out` writable.
 */
enum DepctlStatus depctl_distribution_sf(const struct DepctlDistribution *dist,
                                         double x,
                                         double *out);

/**
 * # Safety
 * `dist` must be a live handle and `out` writable.
 */
enum DepctlStatus depctl_distribution_quantile(const struct DepctlDistribution *dist,
                                               double u,
                                               double *out);

/**
 * # Safety
 * `dist` must be null or a handle not yet freed.
 */
void depctl_distribution_free(struct DepctlDistribution *dist);

/**
 * Capacity in bits/s of a flat channel given as row-major real and imaginary parts.
 *
 * # Safety
 * `h_re` and `h_im` must each hold `n_r * n_t` doubles; `out` must be writable.
 */
enum DepctlStatus depctl_capacity_flat(const double *h_re,
                                       const double *h_im,
                                       uintptr_t n_r,
                                       uintptr_t n_t,
                                       double w,
                                       double rho,
                                       bool csit_known,
                                       double *out);

/**
 * Backlog path of a queue with arrivals `a` and service `s`, both of length `len`.
 *
 * # Safety
 * `a`, `s` and `out` must each hold `len` doubles.
 */
enum DepctlStatus depctl_lindley(const double *a, const double *s, uintptr_t len, double *out);

/**
 * Per-slot delay in slots; `censored[t]` is set when the work present at `t`
 * had not departed by the horizon.
 *
 * # Safety
 * `a` and `s` must hold `len` doubles, `delays` `len` integers and `censored` `len` bools.
 */
enum DepctlStatus depctl_delay(const double *a,
                               const double *s,
                               uintptr_t len,
                               uint64_t *delays,
                               bool *censored);

/**
 * Parses an experiment config. A nonzero `has_seed` makes `seed` override the config's seed.
 *
 * # Safety
 * `json` must be nul-terminated and `out` writable.
 */
enum DepctlStatus depctl_experiment_from_json(const char *json,
                                              bool has_seed,
                                              uint64_t seed,
                                              struct DepctlExperiment **out);

/**
 * Runs the experiment into `out_dir`. On success `verdict` is set and, when
 * `manifest_json` is non-null, it receives the run manifest (free with
 * [`depctl_string_free`]).
 *
 * # Safety
 * `exp` must be a live handle, `out_dir` nul-terminated, `verdict` writable and
 * `manifest_json` null or writable.
 */
enum DepctlStatus depctl_experiment_run(const struct DepctlExperiment *exp,
                                        const char *out_dir,
                                        enum DepctlVerdict *verdict,
                                        char **manifest_json);

/**
 * # Safety
 * `exp` must be null or a handle not yet freed.
 */
void depctl_experiment_free(struct DepctlExperiment *exp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPCTL_H */
