#ifndef NHOP_EQL_H
#define NHOP_EQL_H

/* Generated by cbindgen; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum NhopStatus {
  NHOP_STATUS_OK = 0,
  NHOP_STATUS_NULL_POINTER = 1,
  NHOP_STATUS_INVALID_ARGUMENT = 2,
  NHOP_STATUS_DIMENSION = 3,
  NHOP_STATUS_NOT_STOCHASTIC = 4,
  NHOP_STATUS_NOT_CONVERGED = 5,
  NHOP_STATUS_PARSE = 6,
  NHOP_STATUS_IO = 7,
  NHOP_STATUS_BUFFER_TOO_SMALL = 8,
  NHOP_STATUS_INTERNAL = 9,
  NHOP_STATUS_PANIC = 10,
} NhopStatus;

/**
 * A tabular environment.
 */
typedef struct NhopEnv NhopEnv;

/**
 * Result of an ensemble training run.
 */
typedef struct NhopRun NhopRun;

/**
 * Optimal values, Q-table and policy of an environment.
 */
typedef struct NhopSolution NhopSolution;

/**
 * Settings of [`nhop_run_neql`]. Zero fields take the defaults of
 * [`nhop_run_config_default`].
 */
typedef struct NhopRunConfig {
  size_t trajectory_length;
  size_t min_visits;
  size_t num_environments;
  uint64_t max_iterations;
  double alpha_c1;
  double epsilon_floor;
  /**
   * Time constant of the update ratio `1 - exp(-t / c4)`.
   */
  double c4;
  double gamma;
  uint64_t seed;
} NhopRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *nhop_last_error(void);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum NhopStatus nhop_env_erdos_renyi(size_t num_states,
                                     size_t num_actions,
                                     double edge_probability,
                                     uint64_t seed,
                                     struct NhopEnv **out);

/**
 * `cols == 0` selects three columns per row.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum NhopStatus nhop_env_cliff_walk(size_t rows, size_t cols, struct NhopEnv **out);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum NhopStatus nhop_env_siso(size_t buffer_size, struct NhopEnv **out);

/**
 * Loads a tensor text file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
enum NhopStatus nhop_env_load(const char *path, struct NhopEnv **out);

/**
 * # Safety
 * `env` must be a live handle and the outputs valid for writes.
 */
enum NhopStatus nhop_env_shape(const struct NhopEnv *env, size_t *num_states, size_t *num_actions);

/**
 * Expected stage costs, row-major `[s * num_actions + a]`.
 *
 * # Safety
 * `env` must be a live handle and `out` valid for `len` writes.
 */
enum NhopStatus nhop_env_costs(const struct NhopEnv *env, double *out, size_t len);

/**
 * # Safety
 * `env` must be null or a handle not yet freed.
 */
void nhop_env_free(struct NhopEnv *env);

/**
 * # Safety
 * `env` must be a live handle and `out` valid for writes.
 */
enum NhopStatus nhop_value_iteration(const struct NhopEnv *env,
                                     double gamma,
                                     double tol,
                                     size_t max_iterations,
                                     struct NhopSolution **out);

/**
 * # Safety
 * `sol` must be a live handle and `out` valid for `len` writes.
 */
enum NhopStatus nhop_solution_values(const struct NhopSolution *sol, double *out, size_t len);

/**
 * # Safety
 * `sol` must be a live handle and `out` valid for `len` writes.
 */
enum NhopStatus nhop_solution_policy(const struct NhopSolution *sol, size_t *out, size_t len);

/**
 * Q-table, row-major `[s * num_actions + a]`.
 *
 * # Safety
 * `sol` must be a live handle and `out` valid for `len` writes.
 */
enum NhopStatus nhop_solution_q(const struct NhopSolution *sol, double *out, size_t len);

/**
 * # Safety
 * `sol` must be null or a handle not yet freed.
 */
void nhop_solution_free(struct NhopSolution *sol);

/**
 * Settings for a modest-sized problem with four learners.
 */
struct NhopRunConfig nhop_run_config_default(void);

/**
 * Estimates the model of `env`, trains the ensemble and scores it against
 * the optimal policy of `env`. `orders` may be null, in which case the
 * orders are chosen from `num_environments`. A run stopped by the iteration
 * cap still succeeds; see [`nhop_run_complete`].
 *
 * # Safety
 * `env` and `cfg` must be valid, `orders` null or valid for `num_orders`
 * reads, and `out` valid for writes.
 */
enum NhopStatus nhop_run_neql(const struct NhopEnv *env,
                              const struct NhopRunConfig *cfg,
                              const size_t *orders,
                              size_t num_orders,
                              struct NhopRun **out);

/**
 * # Safety
 * `run` must be a live handle and the outputs valid for writes.
 */
enum NhopStatus nhop_run_summary(const struct NhopRun *run,
                                 uint64_t *iterations,
                                 bool *complete,
                                 double *final_ape);

/**
 * # Safety
 * `run` must be a live handle and `out` valid for writes.
 */
enum NhopStatus nhop_run_complete(const struct NhopRun *run, bool *out);

/**
 * # Safety
 * `run` must be a live handle and `out` valid for `len` writes.
 */
enum NhopStatus nhop_run_policy(const struct NhopRun *run, size_t *out, size_t len);

/**
 * Fused Q-table, row-major `[s * num_actions + a]`.
 *
 * # Safety
 * `run` must be a live handle and `out` valid for `len` writes.
 */
enum NhopStatus nhop_run_q(const struct NhopRun *run, double *out, size_t len);

/**
 * Learner weights at the last logged step, one per environment.
 *
 * # Safety
 * `run` must be a live handle and `out` valid for `len` writes.
 */
enum NhopStatus nhop_run_weights(const struct NhopRun *run, double *out, size_t len);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void nhop_run_free(struct NhopRun *run);

/**
 * Softmax of the negated action values of one state.
 *
 * # Safety
 * `q` and `out` must be valid for `len` elements.
 */
enum NhopStatus nhop_q_to_probabilities(const double *q, size_t len, double *out);

/**
 * Jensen-Shannon divergence in bits.
 *
 * # Safety
 * `p` and `q` must be valid for `len` reads and `out` for one write.
 */
enum NhopStatus nhop_jsd(const double *p, const double *q, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NHOP_EQL_H */
