#ifndef EBDP_H
#define EBDP_H

#include <stddef.h>
#include <stdint.h>

/*
 Estimator applied to the fitted prior.
 */
typedef enum EbdpMethod {
  EBDP_METHOD_DP = 0,
  EBDP_METHOD_SPARSE_DP = 1,
  EBDP_METHOD_HARD_THRESH = 2,
  EBDP_METHOD_SAMPLE_MEAN = 3,
} EbdpMethod;

/*
 Starting assignments of the variational fit.
 */
typedef enum EbdpInit {
  EBDP_INIT_GRID = 0,
  EBDP_INIT_RANDOM = 1,
} EbdpInit;

/*
 Result code of every fallible call.
 */
typedef enum EbdpStatus {
  EBDP_STATUS_OK = 0,
  EBDP_STATUS_NULL_POINTER = 1,
  EBDP_STATUS_INVALID_ARGUMENT = 2,
  EBDP_STATUS_INVALID_DATA = 3,
  EBDP_STATUS_RUNTIME = 4,
  EBDP_STATUS_PANIC = 5,
} EbdpStatus;

/*
 Opaque fitted model.
 */
typedef struct EbdpModel EbdpModel;

/*
 Fitting options. Obtain defaults from [`ebdp_fit_options_default`].
 */
typedef struct EbdpFitOptions {
  double alpha;
  double sigma2;
  double w;
  size_t truncation;
  double tol;
  size_t max_iter;
  uint64_t seed;
  size_t batches;
  double kappa;
  enum EbdpMethod method;
  enum EbdpInit init;
} EbdpFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Default options: alpha 1, sigma2 16, w 0.9, truncation 20, tol 1e-6,
 500 iterations, seed 0, one batch, kappa 0.5, sparse DP estimator,
 grid initialization.
 */
struct EbdpFitOptions ebdp_fit_options_default(void);

/*
 Fits a model on `rows` samples of `cols` features. `labels` holds one
 value per row, each 1 or 2. `options` may be null for the defaults.
 On success `*out` owns a model to be released with [`ebdp_model_free`].

 # Safety
 `features` must point to `rows * cols` doubles, `labels` to `rows` bytes,
 and `out` to writable storage for one pointer.
 */
enum EbdpStatus ebdp_fit(const double *features,
                         size_t rows,
                         size_t cols,
                         const uint8_t *labels,
                         const struct EbdpFitOptions *options,
                         struct EbdpModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must be null or a pointer returned by this library and not yet freed.
 */
void ebdp_model_free(struct EbdpModel *model);

/*
 Number of features the model expects, or 0 for a null model.

 # Safety
 `model` must be null or a live model.
 */
size_t ebdp_model_dim(const struct EbdpModel *model);

/*
 Copies the estimated coefficient vector (length [`ebdp_model_dim`]) into `out`.

 # Safety
 `model` must be a live model and `out` must hold `len` doubles.
 */
enum EbdpStatus ebdp_model_coefficients(const struct EbdpModel *model, double *out, size_t len);

/*
 Scores and labels `rows` samples. `labels` receives 1 or 2 per row;
 `scores` may be null. A positive score means class 1.

 # Safety
 `features` must point to `rows * cols` doubles, `labels` to `rows` bytes
 and `scores` (when non-null) to `rows` doubles.
 */
enum EbdpStatus ebdp_model_predict(const struct EbdpModel *model,
                                   const double *features,
                                   size_t rows,
                                   size_t cols,
                                   uint8_t *labels,
                                   double *scores);

/*
 Serializes the model as JSON. Free the string with [`ebdp_string_free`].

 # Safety
 `model` must be a live model and `out` writable storage for one pointer.
 */
enum EbdpStatus ebdp_model_to_json(const struct EbdpModel *model, char **out);

/*
 Parses a model from JSON written by [`ebdp_model_to_json`] or the CLI.

 # Safety
 `json` must be a nul-terminated string and `out` writable storage for one pointer.
 */
enum EbdpStatus ebdp_model_from_json(const char *json, struct EbdpModel **out);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must be null or a string returned by this library and not yet freed.
 */
void ebdp_string_free(char *s);

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next call into the library on this thread.
 */
const char *ebdp_last_error(void);

/*
 Library version as a static nul-terminated string.
 */
const char *ebdp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EBDP_H */
