#ifndef LASSOCONN_H
#define LASSOCONN_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

/**
 * Result code of every call.
 */
typedef enum {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  LC_STATUS_INVALID_PARAMETER = 2,
  LC_STATUS_INVALID_DATA = 3,
  LC_STATUS_DEGENERATE = 4,
  LC_STATUS_UNSTABLE = 5,
  LC_STATUS_NUMERIC = 6,
  LC_STATUS_CONVERGENCE = 7,
  LC_STATUS_FORMAT = 8,
  LC_STATUS_IO = 9,
  LC_STATUS_INVALID_UTF8 = 10,
  LC_STATUS_OUT_OF_RANGE = 11,
  LC_STATUS_PANIC = 12,
} LcStatus;

/**
 * Weight rule selector for [`lc_problem_from_rasters`].
 */
typedef enum {
  LC_WEIGHT_RULE_BALANCE = 0,
  LC_WEIGHT_RULE_UNWEIGHTED = 1,
} LcWeightRule;

/**
 * Edge rule selector for [`lc_path_rank`].
 */
typedef enum {
  LC_TOPOLOGY_RULE_POSITIVE = 0,
  LC_TOPOLOGY_RULE_NONZERO = 1,
} LcTopologyRule;

typedef struct LcGraph LcGraph;

typedef struct LcPath LcPath;

typedef struct LcProblem LcProblem;

typedef struct LcRanked LcRanked;

typedef struct LcTraces LcTraces;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lc_last_error_message(char *buf, size_t len);

/**
 * Random directed graph without self-loops.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
LcStatus lc_graph_generate(size_t n_nodes, double p_connect, uint64_t seed, LcGraph **out);

/**
 * Graph from `count` edges `sources[k] -> targets[k]`.
 *
 * # Safety
 * `sources` and `targets` must hold `count` entries; `out` must be valid.
 */
LcStatus lc_graph_from_edges(size_t n_nodes,
                             const size_t *sources,
                             const size_t *targets,
                             size_t count,
                             LcGraph **out);

/**
 * # Safety
 * `g` must come from this library or be null.
 */
void lc_graph_free(LcGraph *g);

/**
 * # Safety
 * `g` must be a valid graph and `out` a valid pointer.
 */
LcStatus lc_graph_n_nodes(const LcGraph *g, size_t *out);

/**
 * # Safety
 * `g` must be a valid graph and `out` a valid pointer.
 */
LcStatus lc_graph_n_edges(const LcGraph *g, size_t *out);

/**
 * Number of reciprocal pairs.
 *
 * # Safety
 * `g` must be a valid graph and `out` a valid pointer.
 */
LcStatus lc_graph_count_bidirectional(const LcGraph *g, size_t *out);

/**
 * Dense 0/1 adjacency (row = source) into `buf` of at least `n * n` bytes.
 *
 * # Safety
 * `buf` must hold `len` writable bytes.
 */
LcStatus lc_graph_adjacency(const LcGraph *g, uint8_t *buf, size_t len);

/**
 * Simulates `graph` with the `sim` section of a pipeline config (JSON; null
 * for defaults). The simulation seed is derived from the config's master seed.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be valid.
 */
LcStatus lc_simulate(const LcGraph *graph, const char *config_json, LcTraces **out);

/**
 * # Safety
 * `t` must come from this library or be null.
 */
void lc_traces_free(LcTraces *t);

/**
 * Sample count, neuron count and sampling interval (ms).
 *
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_traces_shape(const LcTraces *t,
                         size_t *n_samples,
                         size_t *n_neurons,
                         double *dt_record);

/**
 * Membrane potentials, `samples x neurons`, into `buf`.
 *
 * # Safety
 * `buf` must hold `len` writable doubles.
 */
LcStatus lc_traces_values(const LcTraces *t, double *buf, size_t len);

/**
 * Detects spikes and events (main detector of the config), bins them and
 * builds the weighted regression problem.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be valid.
 */
LcStatus lc_problem_from_traces(const LcTraces *traces, const char *config_json, LcProblem **out);

/**
 * Regression problem from binned spikes `x` and events `y`, both
 * `n_bins x n_neurons`.
 *
 * # Safety
 * `x` and `y` must hold `n_bins * n_neurons` bytes; `out` must be valid.
 */
LcStatus lc_problem_from_rasters(size_t n_bins,
                                 size_t n_neurons,
                                 const uint8_t *x,
                                 const uint8_t *y,
                                 LcWeightRule rule,
                                 LcProblem **out);

/**
 * # Safety
 * `p` must come from this library or be null.
 */
void lc_problem_free(LcProblem *p);

/**
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_problem_n_neurons(const LcProblem *p, size_t *out);

/**
 * Weighted negative log-likelihood at (`intercepts`, `betas`) and, when the
 * gradient buffers are non-null, its gradient.
 *
 * # Safety
 * `intercepts`/`grad_intercepts` hold `n`, `betas`/`grad_betas` hold `n * n` doubles.
 */
LcStatus lc_nll(const LcProblem *p,
                const double *intercepts,
                const double *betas,
                double *value,
                double *grad_intercepts,
                double *grad_betas);

/**
 * Smallest lambda with an empty support.
 *
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_lambda_max(const LcProblem *p, bool shared_intercept, double *out);

/**
 * Lasso path with default solver settings.
 *
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_fit_path(const LcProblem *p, size_t n_lambdas, double lambda_min_ratio, LcPath **out);

/**
 * # Safety
 * `p` must come from this library or be null.
 */
void lc_path_free(LcPath *p);

/**
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_path_len(const LcPath *p, size_t *out);

/**
 * Lambda, intercepts (`n`) and betas (`n * n`, row = source) of fit `k`.
 * Null buffers are skipped.
 *
 * # Safety
 * Non-null buffers must have the sizes above.
 */
LcStatus lc_path_fit(const LcPath *p, size_t k, double *lambda, double *intercepts, double *betas);

/**
 * Edges ranked by the lambda at which they enter the path.
 *
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_path_rank(const LcPath *p, LcTopologyRule rule, LcRanked **out);

/**
 * Cross-correlation ranking of the spike raster held by `p`.
 *
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_xcorr_rank(const LcProblem *p, size_t max_lag, LcRanked **out);

/**
 * # Safety
 * `r` must come from this library or be null.
 */
void lc_ranked_free(LcRanked *r);

/**
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_ranked_len(const LcRanked *r, size_t *out);

/**
 * Entry `k` of the ranking.
 *
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_ranked_get(const LcRanked *r, size_t k, size_t *source, size_t *target, double *score);

/**
 * ROC area and maximum PPC of a ranking against a true graph.
 *
 * # Safety
 * All pointers must be valid.
 */
LcStatus lc_evaluate(const LcRanked *r, const LcGraph *truth, double *auc, double *max_ppc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LASSOCONN_H */
