#ifndef TRAFFIC_EQUILIBRIUM_H
#define TRAFFIC_EQUILIBRIUM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Link cost model.
 */
typedef enum {
  TE_MODEL_BECKMANN = 0,
  TE_MODEL_STABLE_DYNAMICS = 1,
} TeModel;

/**
 * Result code of every fallible call.
 */
typedef enum {
  TE_STATUS_OK = 0,
  TE_STATUS_NULL_POINTER = 1,
  TE_STATUS_INVALID_UTF8 = 2,
  TE_STATUS_PARSE = 3,
  TE_STATUS_INVALID_ARGUMENT = 4,
  TE_STATUS_UNREACHABLE = 5,
  /**
   * The dual objective is unbounded below: demand does not fit the capacities.
   */
  TE_STATUS_DIVERGED = 6,
  /**
   * Any other numerical failure inside the solver.
   */
  TE_STATUS_SOLVER = 7,
  TE_STATUS_BUFFER_TOO_SMALL = 8,
  TE_STATUS_PANIC = 9,
} TeStatus;

/**
 * Parsed TNTP demand matrix.
 */
typedef struct TeDemand TeDemand;

/**
 * Parsed TNTP network.
 */
typedef struct TeNetwork TeNetwork;

/**
 * Result of [`te_solve`].
 */
typedef struct TeSolution TeSolution;

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *te_last_error_message(void);

/**
 * Static description of a status code.
 */
const char *te_status_name(TeStatus status);

/**
 * Parses a TNTP network file's contents into `*out`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
TeStatus te_network_parse(const char *text, TeNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from [`te_network_parse`] not yet freed.
 */
void te_network_free(TeNetwork *net);

/**
 * # Safety
 * `net` must be null or a live network handle.
 */
size_t te_network_node_count(const TeNetwork *net);

/**
 * # Safety
 * `net` must be null or a live network handle.
 */
size_t te_network_edge_count(const TeNetwork *net);

/**
 * Parses a TNTP trips file's contents into `*out`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
TeStatus te_demand_parse(const char *text, TeDemand **out);

/**
 * # Safety
 * `demand` must be null or a handle from [`te_demand_parse`] not yet freed.
 */
void te_demand_free(TeDemand *demand);

/**
 * # Safety
 * `demand` must be null or a live demand handle.
 */
size_t te_demand_pair_count(const TeDemand *demand);

/**
 * Solves for the equilibrium and stores the result in `*out`.
 *
 * A negative `gamma` selects the automatic choice from `eps_rel`; zero is
 * the deterministic model. `max_iters == 0` keeps the default cap. Running
 * out of iterations is not an error: check [`te_solution_converged`].
 *
 * # Safety
 * `net` and `demand` must be live handles and `out` a writable pointer.
 */
TeStatus te_solve(const TeNetwork *net,
                  const TeDemand *demand,
                  TeModel model,
                  double gamma,
                  double eps_rel,
                  size_t max_iters,
                  TeSolution **out);

/**
 * # Safety
 * `sol` must be null or a handle from [`te_solve`] not yet freed.
 */
void te_solution_free(TeSolution *sol);

/**
 * Copies the averaged edge flows into `buf`, which must hold at least
 * [`te_solution_edge_count`] values.
 *
 * # Safety
 * `sol` must be a live solution handle and `buf` valid for `len` writes.
 */
TeStatus te_solution_flows(const TeSolution *sol, double *buf, size_t len);

/**
 * Copies the final edge times into `buf`.
 *
 * # Safety
 * `sol` must be a live solution handle and `buf` valid for `len` writes.
 */
TeStatus te_solution_times(const TeSolution *sol, double *buf, size_t len);

/**
 * # Safety
 * `sol` must be null or a live solution handle.
 */
size_t te_solution_edge_count(const TeSolution *sol);

/**
 * Final duality gap; NaN for a null handle.
 *
 * # Safety
 * `sol` must be null or a live solution handle.
 */
double te_solution_gap(const TeSolution *sol);

/**
 * Final gap divided by the initial gap; NaN for a null handle.
 *
 * # Safety
 * `sol` must be null or a live solution handle.
 */
double te_solution_rel_gap(const TeSolution *sol);

/**
 * Entropy scale actually used; NaN for a null handle.
 *
 * # Safety
 * `sol` must be null or a live solution handle.
 */
double te_solution_gamma(const TeSolution *sol);

/**
 * # Safety
 * `sol` must be null or a live solution handle.
 */
size_t te_solution_iterations(const TeSolution *sol);

/**
 * `true` when the relative gap target was met.
 *
 * # Safety
 * `sol` must be null or a live solution handle.
 */
bool te_solution_converged(const TeSolution *sol);

#endif  /* TRAFFIC_EQUILIBRIUM_H */
