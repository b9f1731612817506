#ifndef CRCTC_H
#define CRCTC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrctcStatus {
  CRCTC_STATUS_OK = 0,
  CRCTC_STATUS_INVALID_INPUT = 1,
  CRCTC_STATUS_CAPACITY = 2,
  CRCTC_STATUS_INFEASIBLE = 3,
  CRCTC_STATUS_PARSE = 4,
  CRCTC_STATUS_IO = 5,
  CRCTC_STATUS_NULL_POINTER = 6,
  CRCTC_STATUS_PANIC = 7,
} CrctcStatus;

typedef enum CrctcTargetMode {
  CRCTC_TARGET_MODE_STOP_GRADIENT = 0,
  CRCTC_TARGET_MODE_FLOW_GRADIENT = 1,
} CrctcTargetMode;

// Opaque per-frame distribution over the extended vocabulary.
typedef struct CrctcLattice CrctcLattice;

// Opaque token inventory.
typedef struct CrctcVocab CrctcVocab;

// Peak statistics of one lattice.
typedef struct CrctcPeakStats {
  double mean_nonblank_duration;
  double mean_blank_emit_prob;
  double mean_nonblank_emit_prob;
  size_t emissions;
  size_t nonblank_frames;
  size_t blank_frames;
} CrctcPeakStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *crctc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *crctc_version(void);

// Vocabulary of `size` tokens named `a`, `b`, ... with the blank at index 0.
//
// # Safety
// `out` must be a valid pointer.
enum CrctcStatus crctc_vocab_synthetic(size_t size, struct CrctcVocab **out);

// # Safety
// `vocab` must come from this library or be NULL.
void crctc_vocab_free(struct CrctcVocab *vocab);

// Builds a lattice by applying a row-wise softmax to `logits`.
//
// # Safety
// `logits` must hold `frames * width` values; `out` must be valid.
enum CrctcStatus crctc_lattice_from_logits(const double *logits,
                                           size_t frames,
                                           size_t width,
                                           struct CrctcLattice **out);

// Builds a lattice from probabilities; each row must sum to 1.
//
// # Safety
// `probs` must hold `frames * width` values; `out` must be valid.
enum CrctcStatus crctc_lattice_from_probs(const double *probs,
                                          size_t frames,
                                          size_t width,
                                          struct CrctcLattice **out);

// # Safety
// `lattice` must come from this library or be NULL.
void crctc_lattice_free(struct CrctcLattice *lattice);

// Frame count; 0 for NULL.
//
// # Safety
// `lattice` must come from this library or be NULL.
size_t crctc_lattice_frames(const struct CrctcLattice *lattice);

// Symbols per frame; 0 for NULL.
//
// # Safety
// `lattice` must come from this library or be NULL.
size_t crctc_lattice_width(const struct CrctcLattice *lattice);

// Copies the probabilities into `out` (`frames * width` values).
//
// # Safety
// `out` must have room for `frames * width` values.
enum CrctcStatus crctc_lattice_probs(const struct CrctcLattice *lattice, double *out);

// Negative log-likelihood of `labels` (indices into the non-blank tokens).
//
// # Safety
// Pointers must be valid; `labels` must hold `len` values.
enum CrctcStatus crctc_ctc_loss(const struct CrctcLattice *lattice,
                                const struct CrctcVocab *vocab,
                                const size_t *labels,
                                size_t len,
                                double *loss);

// CTC loss and its gradient with respect to the logits.
//
// # Safety
// `logits` and `grad` must hold `frames * width` values.
enum CrctcStatus crctc_ctc_grad(const double *logits,
                                size_t frames,
                                size_t width,
                                const struct CrctcVocab *vocab,
                                const size_t *labels,
                                size_t len,
                                double *loss,
                                double *grad);

// Two-branch objective `1/2 (CTC_a + CTC_b) + alpha * CR` over all frames.
// `masks_a`/`masks_b` flag time-masked frames (nonzero = masked) and may be
// NULL for "nothing masked".
//
// # Safety
// Logit and gradient arrays must hold `frames * width` values; non-NULL
// masks must hold `frames` bytes.
enum CrctcStatus crctc_cr_loss(const double *logits_a,
                               const double *logits_b,
                               const uint8_t *masks_a,
                               const uint8_t *masks_b,
                               size_t frames,
                               size_t width,
                               const struct CrctcVocab *vocab,
                               const size_t *labels,
                               size_t len,
                               double alpha,
                               enum CrctcTargetMode target_mode,
                               double *loss,
                               double *grad_a,
                               double *grad_b);

// `CTC + beta * smoothness penalty` with the default kernel.
//
// # Safety
// `logits` and `grad` must hold `frames * width` values.
enum CrctcStatus crctc_sr_loss(const double *logits,
                               size_t frames,
                               size_t width,
                               const struct CrctcVocab *vocab,
                               const size_t *labels,
                               size_t len,
                               double beta,
                               double *loss,
                               double *grad);

// Writes the temporally smoothed probabilities (default kernel) to `out`.
//
// # Safety
// `out` must have room for `frames * width` values.
enum CrctcStatus crctc_smooth(const struct CrctcLattice *lattice, double *out);

// Best-path decoding. `*out_len` receives the label count even when the
// buffer is too small (status `CAPACITY`).
//
// # Safety
// `out` must have room for `capacity` values.
enum CrctcStatus crctc_decode_greedy(const struct CrctcLattice *lattice,
                                     const struct CrctcVocab *vocab,
                                     size_t *out,
                                     size_t capacity,
                                     size_t *out_len);

// Prefix beam search; same buffer contract as [`crctc_decode_greedy`].
//
// # Safety
// `out` must have room for `capacity` values.
enum CrctcStatus crctc_decode_prefix(const struct CrctcLattice *lattice,
                                     const struct CrctcVocab *vocab,
                                     size_t beam,
                                     size_t *out,
                                     size_t capacity,
                                     size_t *out_len);

// # Safety
// Pointers must be valid.
enum CrctcStatus crctc_peak_stats(const struct CrctcLattice *lattice,
                                  const struct CrctcVocab *vocab,
                                  struct CrctcPeakStats *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRCTC_H */
