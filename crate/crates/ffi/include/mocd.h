#ifndef MOCD_H
#define MOCD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MocdStatus {
  MOCD_STATUS_OK = 0,
  MOCD_STATUS_NULL_POINTER = 1,
  // Argument outside the operation's domain, or mismatched sizes.
  MOCD_STATUS_INVALID_ARGUMENT = 2,
  // Non-finite model parameters or a similar unusable object.
  MOCD_STATUS_INVALID_STATE = 3,
  MOCD_STATUS_IO = 4,
  // Malformed input file, checkpoint or configuration.
  MOCD_STATUS_PARSE = 5,
  MOCD_STATUS_TRAINING = 6,
  // A Rust panic was caught at the boundary.
  MOCD_STATUS_PANIC = 7,
} MocdStatus;

// Opaque dataset handle.
typedef struct MocdDataset MocdDataset;

// Opaque trained-model handle.
typedef struct MocdModel MocdModel;

typedef struct MocdMasses {
  double m_i;
  double m_j;
  // Mass on the ambiguous pair `{i, j}`.
  double m_amb;
  // Out-of-frame mass.
  double m_empty;
} MocdMasses;

typedef struct MocdCoefficients {
  double w_i;
  double w_j;
  double w_unk;
} MocdCoefficients;

// One scored test sample.
typedef struct MocdRecord {
  // Confidence of the predicted class.
  double score;
  size_t predicted;
  // True class; ignored for unknown samples.
  size_t label;
  // Nonzero for samples of an unknown class.
  uint8_t is_unknown;
} MocdRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into this library on the same thread.
const char *mocd_last_error(void);

// Uncertainty budget `c * (1 - |lambda - 1/2|)`.
//
// # Safety
// `out` must be NULL or point to writable memory for one `double`.
enum MocdStatus mocd_adaptive_uncertainty(double lambda, double c, double *out);

// Mass assignment of a pair mixed with weight `lambda` under budget `u`.
//
// # Safety
// `out` must be NULL or point to a writable `MocdMasses`.
enum MocdStatus mocd_omix_masses(double lambda, double u, struct MocdMasses *out);

// Writes the `classes`-long soft label of mixing class `class_i` with
// weight `lambda` and class `class_j` under budget `u`.
//
// # Safety
// `out` must be NULL or point to `classes` writable doubles.
enum MocdStatus mocd_omix_soft_label(double lambda,
                                     double u,
                                     size_t class_i,
                                     size_t class_j,
                                     size_t classes,
                                     double *out);

// Weights of the three cross-entropy terms of the perception loss.
//
// # Safety
// `out` must be NULL or point to a writable `MocdCoefficients`.
enum MocdStatus mocd_perception_coefficients(double lambda, double u, struct MocdCoefficients *out);

// Biased HSIC of `z` (`n x dz`) and `h` (`n x dh`) with Gaussian kernels.
// `sigma <= 0` selects the median heuristic for each argument.
//
// # Safety
// `z` and `h` must point to `n * dz` and `n * dh` readable doubles; `out`
// must be NULL or writable.
enum MocdStatus mocd_hsic(const double *z,
                          size_t n,
                          size_t dz,
                          const double *h,
                          size_t dh,
                          double sigma,
                          double *out);

// `1 - sqrt(2 known / (2 known + unknown))`.
//
// # Safety
// `out` must be NULL or writable.
enum MocdStatus mocd_openness(size_t known, size_t unknown, double *out);

// False-positive and correct-classification rates at score threshold `p`.
//
// # Safety
// `records` must point to `n` readable records; `fpr` and `ccr` must be
// NULL or writable.
enum MocdStatus mocd_ccr_fpr_at(const struct MocdRecord *records,
                                size_t n,
                                double p,
                                double *fpr,
                                double *ccr);

// Best CCR among operating points with FPR at most `q`, `q` in (0, 1].
//
// # Safety
// `records` must point to `n` readable records; `out` must be NULL or
// writable.
enum MocdStatus mocd_ccr_at_fpr(const struct MocdRecord *records, size_t n, double q, double *out);

// Loads a dataset directory (`meta.json`, `view_<v>.csv`, `labels.csv`).
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be NULL or writable.
enum MocdStatus mocd_dataset_load(const char *dir, struct MocdDataset **out);

// Releases a dataset. NULL is ignored.
//
// # Safety
// `dataset` must be NULL or a handle from [`mocd_dataset_load`] that has
// not been freed.
void mocd_dataset_free(struct MocdDataset *dataset);

// Sample count, view count and class count.
//
// # Safety
// `dataset` must be a live handle; each out-pointer must be NULL or
// writable (NULL outputs are skipped).
enum MocdStatus mocd_dataset_shape(const struct MocdDataset *dataset,
                                   size_t *samples,
                                   size_t *views,
                                   size_t *classes);

// Copies view `view` (`samples x dim`, row-major) into `buffer` of
// `capacity` doubles and stores its width in `dim`.
//
// # Safety
// `dataset` must be a live handle; `buffer` must hold `capacity` doubles.
enum MocdStatus mocd_dataset_view(const struct MocdDataset *dataset,
                                  size_t view,
                                  double *buffer,
                                  size_t capacity,
                                  size_t *dim);

// Copies the `samples` labels into `labels`.
//
// # Safety
// `dataset` must be a live handle; `labels` must hold `samples` values.
enum MocdStatus mocd_dataset_labels(const struct MocdDataset *dataset,
                                    size_t *labels,
                                    size_t samples);

// Loads a checkpoint written by `mocd run`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be NULL or writable.
enum MocdStatus mocd_model_load(const char *path, struct MocdModel **out);

// Releases a model. NULL is ignored.
//
// # Safety
// `model` must be NULL or a handle from [`mocd_model_load`] that has not
// been freed.
void mocd_model_free(struct MocdModel *model);

// Number of classes and views, and the width of every view written to
// `view_dims` (capacity `max_views`). NULL outputs are skipped.
//
// # Safety
// `model` must be a live handle; `view_dims` must hold `max_views` values.
enum MocdStatus mocd_model_shape(const struct MocdModel *model,
                                 size_t *classes,
                                 size_t *views,
                                 size_t *view_dims,
                                 size_t max_views);

// Predicts `samples` rows. `views[v]` is a row-major `samples x dim_v`
// matrix. Outputs (any may be NULL): `probabilities` (`samples x classes`),
// `scores` (max probability) and `predicted` class ids.
//
// # Safety
// `model` must be a live handle; `views` must hold one pointer per view,
// each to `samples * dim_v` doubles; outputs must have the sizes above.
enum MocdStatus mocd_model_predict(const struct MocdModel *model,
                                   const double *const *views,
                                   size_t view_count,
                                   size_t samples,
                                   double *probabilities,
                                   double *scores,
                                   size_t *predicted);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOCD_H */
