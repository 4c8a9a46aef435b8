#ifndef AEBOUND_H
#define AEBOUND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum AebStatus {
  AEB_STATUS_OK = 0,
  AEB_STATUS_NULL_POINTER = 1,
  AEB_STATUS_INVALID_ARGUMENT = 2,
  AEB_STATUS_DIMENSION_MISMATCH = 3,
  AEB_STATUS_IO = 4,
  AEB_STATUS_PARSE = 5,
  AEB_STATUS_NUMERIC = 6,
  AEB_STATUS_PANIC = 7,
} AebStatus;

/**
 * A loaded autoencoder.
 */
typedef struct AebModel AebModel;

/**
 * Generalization bound quantities of one model.
 */
typedef struct AebBound {
  double complexity;
  double delta_term;
  double delta_term_normalized;
  double margin_bound_g1;
} AebBound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * excluding the terminator; an empty message means the last call succeeded.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t aeb_last_error_message(char *buf, size_t len);

/**
 * Loads a JSON checkpoint from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AebStatus aeb_model_load(const char *path, struct AebModel **out);

/**
 * Parses a checkpoint from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum AebStatus aeb_model_from_json(const char *json, struct AebModel **out);

/**
 * Releases a model. Null is accepted.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void aeb_model_free(struct AebModel *model);

/**
 * Input width, code width, number of weight matrices and largest layer width.
 *
 * # Safety
 * `model` must be a live handle; each out pointer must be null or writable.
 */
enum AebStatus aeb_model_dims(const struct AebModel *model,
                              size_t *input_dim,
                              size_t *code_dim,
                              size_t *depth,
                              size_t *max_width);

/**
 * Reconstruction `f(x)`; `out_len` must equal the input width.
 *
 * # Safety
 * `x` valid for `x_len` reads, `out` for `out_len` writes.
 */
enum AebStatus aeb_model_forward(const struct AebModel *model,
                                 const double *x,
                                 size_t x_len,
                                 double *out,
                                 size_t out_len);

/**
 * Code `enc(x)`; `out_len` must equal the code width.
 *
 * # Safety
 * As for [`aeb_model_forward`].
 */
enum AebStatus aeb_model_encode(const struct AebModel *model,
                                const double *x,
                                size_t x_len,
                                double *out,
                                size_t out_len);

/**
 * Decoding `dec(z)`; `out_len` must equal the input width.
 *
 * # Safety
 * As for [`aeb_model_forward`].
 */
enum AebStatus aeb_model_decode(const struct AebModel *model,
                                const double *z,
                                size_t z_len,
                                double *out,
                                size_t out_len);

/**
 * Spectral complexity term for inputs of L2 norm at most `b`.
 *
 * # Safety
 * `model` live, `out` writable.
 */
enum AebStatus aeb_model_complexity(const struct AebModel *model, double b, double *out);

/**
 * Margin generalization bound for a model trained on `m` samples.
 *
 * # Safety
 * `model` live, `out` writable.
 */
enum AebStatus aeb_model_generalization_bound(const struct AebModel *model,
                                              double b,
                                              size_t m,
                                              double delta,
                                              double gamma1,
                                              double gamma2,
                                              double margin_loss_hat_g2,
                                              struct AebBound *out);

/**
 * Decoder Lipschitz upper bound (spectral norm product, 1/4 per sigmoid).
 *
 * # Safety
 * `model` live, `out` writable.
 */
enum AebStatus aeb_model_lipschitz_upper(const struct AebModel *model, double *out);

/**
 * γ-margin loss of one reconstruction; `x` must be binary.
 *
 * # Safety
 * `x` and `xhat` valid for `len` reads, `out` writable.
 */
enum AebStatus aeb_margin_loss(const double *x,
                               const double *xhat,
                               size_t len,
                               double gamma,
                               double *out);

/**
 * `R(r, γ)`, the squared-error bound implied by margin loss `r`.
 *
 * # Safety
 * `out` writable.
 */
enum AebStatus aeb_r_bound(double r, double gamma, size_t input_dim, double *out);

/**
 * `√R(r, γ)`.
 *
 * # Safety
 * `out` writable.
 */
enum AebStatus aeb_mu_bound_worst(double r, double gamma, size_t input_dim, double *out);

/**
 * μ bound under symmetrically distributed errors.
 *
 * # Safety
 * `out` writable.
 */
enum AebStatus aeb_mu_bound_symmetric(double r, double gamma, size_t input_dim, double *out);

/**
 * Largest singular value of a row-major `rows × cols` matrix. `converged`
 * may be null.
 *
 * # Safety
 * `values` valid for `rows * cols` reads, `out` writable.
 */
enum AebStatus aeb_spectral_norm(const double *values,
                                 size_t rows,
                                 size_t cols,
                                 double *out,
                                 bool *converged);

/**
 * `((ln m)²/m)^{1/n} / ((ln m)²/m)^{1/n_b}`.
 *
 * # Safety
 * `out` writable.
 */
enum AebStatus aeb_improvement_factor(size_t m, size_t n, size_t n_b, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* AEBOUND_H */
