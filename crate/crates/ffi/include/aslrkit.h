#ifndef ASLRKIT_H
#define ASLRKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AslrkitEstimator {
  ASLRKIT_ESTIMATOR_NSB = 0,
  ASLRKIT_ESTIMATOR_PLUGIN = 1,
} AslrkitEstimator;

typedef enum AslrkitStatus {
  ASLRKIT_STATUS_OK = 0,
  ASLRKIT_STATUS_NULL_POINTER = 1,
  ASLRKIT_STATUS_INVALID_ARGUMENT = 2,
  ASLRKIT_STATUS_IO = 3,
  ASLRKIT_STATUS_FORMAT = 4,
  ASLRKIT_STATUS_ESTIMATOR = 5,
  ASLRKIT_STATUS_POLICY = 6,
  ASLRKIT_STATUS_BUFFER_TOO_SMALL = 7,
  ASLRKIT_STATUS_PANIC = 8,
} AslrkitStatus;

/**
 * A loaded or generated sample set.
 */
typedef struct AslrkitSampleSet AslrkitSampleSet;

typedef struct AslrkitEstimate {
  double bits;
  double posterior_std_bits;
  uint64_t n_samples;
  double alphabet_log2;
  double bias_bound;
  bool low_confidence;
} AslrkitEstimate;

typedef struct AslrkitCost {
  double attempts;
  double seconds;
} AslrkitCost;

typedef struct AslrkitCrossection {
  struct AslrkitCost direct;
  struct AslrkitCost leaked;
  double gain_factor;
} AslrkitCrossection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *aslrkit_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 */
void aslrkit_string_free(char *s);

/**
 * Loads a sample file.
 */
enum AslrkitStatus aslrkit_sample_set_load(const char *path, struct AslrkitSampleSet **out);

/**
 * Simulates `runs` records from a builtin policy name or policy file. A
 * null `seed` keeps the policy's own seed.
 */
enum AslrkitStatus aslrkit_synth_generate(const char *policy,
                                          uint64_t runs,
                                          const uint64_t *seed,
                                          struct AslrkitSampleSet **out);

void aslrkit_sample_set_free(struct AslrkitSampleSet *set);

/**
 * Number of records; 0 for a null handle.
 */
size_t aslrkit_sample_set_len(const struct AslrkitSampleSet *set);

enum AslrkitStatus aslrkit_sample_set_save(const struct AslrkitSampleSet *set, const char *path);

/**
 * Copies the addresses of `object` into `buf`. `len` receives the record
 * count; when it exceeds `cap` nothing is copied and BufferTooSmall is
 * returned. Objects with missing addresses are rejected.
 */
enum AslrkitStatus aslrkit_sample_set_series(const struct AslrkitSampleSet *set,
                                             const char *object,
                                             uint64_t *buf,
                                             size_t cap,
                                             size_t *len);

/**
 * NSB entropy of already-normalized values. A negative or NaN
 * `alphabet_log2` selects the default alphabet from the observed spread.
 */
enum AslrkitStatus aslrkit_nsb_entropy(const uint64_t *values,
                                       size_t n,
                                       double alphabet_log2,
                                       struct AslrkitEstimate *out);

enum AslrkitStatus aslrkit_plugin_entropy(const uint64_t *values,
                                          size_t n,
                                          struct AslrkitEstimate *out);

/**
 * Entropy of the paired differences `a[i] - b[i]`.
 */
enum AslrkitStatus aslrkit_correlation_entropy(const uint64_t *a,
                                               const uint64_t *b,
                                               size_t n,
                                               uint32_t estimator_kind,
                                               struct AslrkitEstimate *out);

/**
 * Smallest sample count keeping the estimator bias under `max_bias`.
 */
enum AslrkitStatus aslrkit_min_samples(double entropy_bits, double max_bias, uint64_t *out);

enum AslrkitStatus aslrkit_bruteforce_cost(double bits, double tps, struct AslrkitCost *out);

enum AslrkitStatus aslrkit_spray_cost(uint64_t region_bytes,
                                      uint64_t payload_bytes,
                                      double tps,
                                      struct AslrkitCost *out);

enum AslrkitStatus aslrkit_crossection_gain(double abs_bits_target,
                                            double corr_bits_via_leak,
                                            double tps,
                                            struct AslrkitCrossection *out);

uint32_t aslrkit_partial_overwrite_bits(uint64_t pointer_delta_bytes, uint32_t page_align_bits);

/**
 * Runs the full analysis and returns the report as a JSON string. A
 * negative or NaN `alphabet_override_bits` means no override.
 */
enum AslrkitStatus aslrkit_analyze_json(const struct AslrkitSampleSet *set,
                                        uint32_t estimator_kind,
                                        double tps,
                                        double alphabet_override_bits,
                                        char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASLRKIT_H */
