#ifndef KRONVB_H
#define KRONVB_H

/* C interface to the kronvb library: variational inverse-Wishart fits with
 * Kronecker-structured covariance.
 *
 * Every function returns a kronvb_status; on failure the thread's last error
 * message is available from kronvb_last_error(). Objects are opaque handles
 * released with the matching *_free function (NULL is accepted). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KRONVB_API __declspec(dllexport)
#else
#define KRONVB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kronvb_status {
  KRONVB_OK = 0,
  KRONVB_ERR_VALIDATION = 1,
  KRONVB_ERR_NUMERIC = 2,
  KRONVB_ERR_IO = 3
} kronvb_status;

typedef enum kronvb_method { KRONVB_JOINT = 0, KRONVB_MEANFIELD = 1 } kronvb_method;

typedef enum kronvb_metric {
  KRONVB_METRIC_PULLBACK = 0,
  KRONVB_METRIC_PRODUCT = 1,
  KRONVB_METRIC_PULLBACK_NAIVE = 2
} kronvb_metric;

typedef enum kronvb_fit_status {
  KRONVB_FIT_CONVERGED = 0,
  KRONVB_FIT_RUNNING = 1,
  KRONVB_FIT_STALLED = 2,
  KRONVB_FIT_DIVERGED = 3
} kronvb_fit_status;

typedef struct kronvb_data kronvb_data;
typedef struct kronvb_state kronvb_state;
typedef struct kronvb_fit kronvb_fit;

KRONVB_API const char *kronvb_version(void);
/* Message of the last failure on this thread; "" if none. */
KRONVB_API const char *kronvb_last_error(void);

/* ---- data ------------------------------------------------------------- */

/* Draws n tensor-normal observations from a generated truth. The data's last
 * mode indexes observations; the truth is a "covariance" state. */
KRONVB_API kronvb_status kronvb_simulate(const size_t *dims, size_t modes, size_t n,
                                         uint64_t seed, kronvb_data **data,
                                         kronvb_state **truth);
/* Copies `values` (row-major, length prod(shape)). */
KRONVB_API kronvb_status kronvb_data_create(const size_t *shape, size_t modes,
                                            const double *values, kronvb_data **out);
/* ".csv" paths are read as 2-way tables; anything else as f64le binary with a
 * "<path>.json" sidecar. */
KRONVB_API kronvb_status kronvb_data_read(const char *path, kronvb_data **out);
KRONVB_API kronvb_status kronvb_data_write(const kronvb_data *data, const char *path);
/* Writes up to `capacity` extents; *modes receives the full count. */
KRONVB_API kronvb_status kronvb_data_shape(const kronvb_data *data, size_t *shape,
                                           size_t capacity, size_t *modes);
KRONVB_API kronvb_status kronvb_data_values(const kronvb_data *data, const double **values,
                                            size_t *count);
/* FNV-1a over the bytes of the scatter matrix S = sum_n y_n y_n^T. */
KRONVB_API kronvb_status kronvb_data_checksum(const kronvb_data *data, uint64_t *checksum);
KRONVB_API void kronvb_data_free(kronvb_data *data);

/* ---- states ----------------------------------------------------------- */

KRONVB_API kronvb_status kronvb_state_read(const char *path, kronvb_state **out);
KRONVB_API kronvb_status kronvb_state_write(const kronvb_state *state, const char *path);
/* "joint", "meanfield" or "covariance"; owned by the state. */
KRONVB_API const char *kronvb_state_family(const kronvb_state *state);
KRONVB_API kronvb_status kronvb_state_dims(const kronvb_state *state, size_t *dims,
                                           size_t capacity, size_t *modes);
/* One entry for joint states, one per mode for mean-field states. */
KRONVB_API kronvb_status kronvb_state_nu(const kronvb_state *state, double *nu,
                                         size_t capacity, size_t *count);
/* Row-major d_i x d_i factor of `mode` into `out` (capacity >= d_i^2). */
KRONVB_API kronvb_status kronvb_state_factor(const kronvb_state *state, size_t mode,
                                             double *out, size_t capacity);
KRONVB_API void kronvb_state_free(kronvb_state *state);

/* ---- fitting ---------------------------------------------------------- */

typedef struct kronvb_fit_options {
  kronvb_method method;
  kronvb_metric metric;
  int orthogonalize;  /* joint only: keep |A_i| = 1 for i > 0 */
  double log10_eps;   /* factor step */
  double log10_eps_dof;
  size_t max_iters;
  size_t record_every;
  int backtracking;
  int stop_when_converged;
  uint64_t seed;      /* random starting point */
} kronvb_fit_options;

KRONVB_API void kronvb_fit_options_default(kronvb_fit_options *options);

/* Fits the data (last mode = observations) under the default priors. The
 * returned fit is valid even when the run diverged; check its status. */
KRONVB_API kronvb_status kronvb_fit_run(const kronvb_data *data,
                                        const kronvb_fit_options *options, kronvb_fit **out);
KRONVB_API kronvb_fit_status kronvb_fit_get_status(const kronvb_fit *fit);
KRONVB_API const char *kronvb_fit_message(const kronvb_fit *fit);
KRONVB_API size_t kronvb_fit_iterations(const kronvb_fit *fit);
KRONVB_API double kronvb_fit_final_elbo(const kronvb_fit *fit);
KRONVB_API kronvb_status kronvb_fit_write_trace(const kronvb_fit *fit, const char *path);
/* CSV text of the last recorded trace row including the header; owned by the fit. */
KRONVB_API const char *kronvb_fit_last_row(const kronvb_fit *fit);
KRONVB_API kronvb_status kronvb_fit_state(const kronvb_fit *fit, kronvb_state **out);
KRONVB_API void kronvb_fit_free(kronvb_fit *fit);

/* ---- sampling --------------------------------------------------------- */

typedef struct kronvb_sample_options {
  size_t draws;       /* K */
  size_t inner;       /* m, Mahalanobis inner samples */
  uint64_t seed;
  int write_draws;    /* also write draws.json */
  int dense;          /* dense covariance draws instead of factor form */
} kronvb_sample_options;

KRONVB_API void kronvb_sample_options_default(kronvb_sample_options *options);

/* Draws K covariances from a joint or mean-field state and writes
 * summary.json (mean factors, nearest-Kronecker residual, separable flag;
 * Mahalanobis statistics when `truth` is given) into `out_dir`, plus
 * draws.json when requested. Draw t uses the t-th split of fork 0 of the
 * seed; joint draws come from one IW precision Cholesky factor, mean-field
 * draws from one per mode. */
KRONVB_API kronvb_status kronvb_sample_run(const kronvb_state *state,
                                           const kronvb_state *truth,
                                           const kronvb_sample_options *options,
                                           const char *out_dir);

/* ---- experiments ------------------------------------------------------ */

/* Resolves a JSON experiment config against the defaults of its kind into
 * *resolved (release with kronvb_string_free). */
KRONVB_API kronvb_status kronvb_experiment_resolve(const char *config_json, char **resolved);
/* Runs a config, writing CSV tables and summary.json into out_dir.
 * real-data-fit reads `data_path`; other kinds ignore it. Failed cells are
 * recorded in the outputs; KRONVB_ERR_NUMERIC only when every cell failed. */
KRONVB_API kronvb_status kronvb_experiment_run(const char *config_json, const char *data_path,
                                               const char *out_dir);
KRONVB_API void kronvb_string_free(char *s);

#ifdef __cplusplus
}
#endif

#endif
