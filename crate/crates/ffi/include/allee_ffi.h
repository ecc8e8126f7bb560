#ifndef ALLEE_FFI_H
#define ALLEE_FFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Values of [`AlleeInit::kind`]: vertex `vertex` at density 1 and all
 * others at 0.
 */
#define ALLEE_INIT_SINGLE 0

/**
 * Each vertex at density 1 with probability `rho`, else 0.
 */
#define ALLEE_INIT_BERNOULLI 1

/**
 * Outcome codes used in [`AlleeRunResult::outcome`].
 */
#define ALLEE_OUTCOME_UNDECIDED 0

#define ALLEE_OUTCOME_EXPANSION 1

#define ALLEE_OUTCOME_EXTINCTION -1

/**
 * Result code of every fallible call.
 */
typedef enum AlleeStatus {
  ALLEE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  ALLEE_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of range or inconsistent.
   */
  ALLEE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The library panicked; this is a bug.
   */
  ALLEE_STATUS_PANIC = 3,
} AlleeStatus;

/**
 * Opaque graph handle.
 */
typedef struct AlleeGraph AlleeGraph;

/**
 * How a run starts.
 */
typedef struct AlleeInit {
  /**
   * `ALLEE_INIT_SINGLE` or `ALLEE_INIT_BERNOULLI`.
   */
  int32_t kind;
  size_t vertex;
  double rho;
} AlleeInit;

typedef struct AlleeRunResult {
  /**
   * One of the `ALLEE_OUTCOME_*` codes.
   */
  int32_t outcome;
  /**
   * Absorption time, NaN when undecided.
   */
  double t_absorb;
  uint64_t events;
  double final_time;
} AlleeRunResult;

typedef struct AlleeEstimate {
  uint64_t n_rep;
  uint64_t n_expand;
  uint64_t n_extinct;
  uint64_t n_undecided;
  /**
   * Expansions over decided runs, NaN when none decided.
   */
  double p_hat;
  /**
   * 95% Wilson interval on decided runs.
   */
  double ci_lo;
  double ci_hi;
} AlleeEstimate;

/**
 * A quantity as natural log and linear value. `underflow` is set when the
 * linear value is below the smallest positive normal double.
 */
typedef struct AlleeLogValue {
  double log;
  double linear;
  bool underflow;
} AlleeLogValue;

typedef struct AlleeLemma6 {
  struct AlleeLogValue four_exp;
  struct AlleeLogValue x_tail;
  struct AlleeLogValue y_tail;
  struct AlleeLogValue total;
  /**
   * `total < 3^-36`, decided in log space.
   */
  bool passes;
} AlleeLemma6;

typedef struct AlleeDispersionScale {
  uint32_t n;
  double t_n;
  double k_n;
  double log_k_n;
} AlleeDispersionScale;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or an empty
 * string. The pointer stays valid until the next library call on the
 * same thread.
 */
const char *allee_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *allee_version(void);

/**
 * Cycle on `n >= 3` vertices.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum AlleeStatus allee_graph_ring(size_t n, struct AlleeGraph **out);

/**
 * Complete graph on `n >= 2` vertices.
 *
 * # Safety
 * As for [`allee_graph_ring`].
 */
enum AlleeStatus allee_graph_complete(size_t n, struct AlleeGraph **out);

/**
 * Circulant graph: vertex `i` joined to `i +- 1, ..., i +- d/2` (mod `n`).
 *
 * # Safety
 * As for [`allee_graph_ring`].
 */
enum AlleeStatus allee_graph_circulant(size_t n, size_t d, struct AlleeGraph **out);

/**
 * Graph on `n` vertices from `n_edges` pairs stored flat in `pairs`
 * (`u0, v0, u1, v1, ...`).
 *
 * # Safety
 * `pairs` must point to `2 * n_edges` readable values (it may be null
 * when `n_edges` is 0); `out` as for [`allee_graph_ring`].
 */
enum AlleeStatus allee_graph_from_edges(size_t n,
                                        const size_t *pairs,
                                        size_t n_edges,
                                        struct AlleeGraph **out);

/**
 * Releases a graph. Null is ignored.
 *
 * # Safety
 * `graph` must be null or a handle from an `allee_graph_*` constructor
 * that has not been freed.
 */
void allee_graph_free(struct AlleeGraph *graph);

/**
 * Vertex count, 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t allee_graph_vertex_count(const struct AlleeGraph *graph);

/**
 * Edge count, 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t allee_graph_edge_count(const struct AlleeGraph *graph);

/**
 * One run of the full process until absorption or `event_cap` events.
 * The Bernoulli start (if any) and the events are both drawn from `seed`.
 *
 * # Safety
 * `graph` must be a live handle and `out` writable, or null.
 */
enum AlleeStatus allee_run(const struct AlleeGraph *graph,
                           double theta,
                           double mu,
                           struct AlleeInit init,
                           uint64_t seed,
                           uint64_t event_cap,
                           struct AlleeRunResult *out);

/**
 * Monte Carlo estimate of the expansion probability from `replicates`
 * independent runs with seeds derived from `seed`.
 *
 * # Safety
 * `graph` must be a live handle and `out` writable, or null.
 */
enum AlleeStatus allee_estimate_expansion(const struct AlleeGraph *graph,
                                          double theta,
                                          double mu,
                                          struct AlleeInit init,
                                          uint64_t replicates,
                                          uint64_t seed,
                                          uint64_t event_cap,
                                          struct AlleeEstimate *out);

/**
 * `C(T) = 4 e^-T + 2 P(Poisson(T) > 2T) + 2 P(Poisson(2T) > 4T)` with
 * its components, all in log space.
 *
 * # Safety
 * `out` must be writable or null.
 */
enum AlleeStatus allee_lemma6_complement(double t, struct AlleeLemma6 *out);

/**
 * `mu^2 (1 - mu)^1140` in log and linear form.
 *
 * # Safety
 * `out` must be writable or null.
 */
enum AlleeStatus allee_theorem2_threshold(double mu, struct AlleeLogValue *out);

/**
 * Smallest `n` with `(1 - mu)^n < theta`, `T_N = n ln(ln N) / N` and
 * `K_N = 4^(N T_N)`.
 *
 * # Safety
 * `out` must be writable or null.
 */
enum AlleeStatus allee_dispersion_scale(double theta,
                                        double mu,
                                        size_t n_vertices,
                                        struct AlleeDispersionScale *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALLEE_FFI_H */
