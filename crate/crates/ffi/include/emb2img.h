#ifndef EMB2IMG_H
#define EMB2IMG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call. Nonzero values match the `emb2img` CLI
 exit codes.
 */
typedef enum Emb2imgStatus {
  EMB2IMG_STATUS_OK = 0,
  EMB2IMG_STATUS_IO = 10,
  EMB2IMG_STATUS_MALFORMED_HEADER = 11,
  EMB2IMG_STATUS_DIMENSION_MISMATCH = 12,
  EMB2IMG_STATUS_NON_FINITE_VALUE = 13,
  EMB2IMG_STATUS_INVALID_LABEL = 14,
  EMB2IMG_STATUS_DUPLICATE_NAME = 15,
  EMB2IMG_STATUS_INVARIANT_VIOLATION = 16,
  EMB2IMG_STATUS_TSNE_INVALID_CONFIG = 20,
  EMB2IMG_STATUS_BANDWIDTH_SEARCH_FAILED = 21,
  EMB2IMG_STATUS_TSNE_DIVERGENCE = 22,
  EMB2IMG_STATUS_DEGENERATE_GEOMETRY = 30,
  EMB2IMG_STATUS_ZERO_EXTENT = 40,
  EMB2IMG_STATUS_LENGTH_MISMATCH = 41,
  EMB2IMG_STATUS_INVALID_GRID = 42,
  EMB2IMG_STATUS_SHAPE_MISMATCH = 50,
  EMB2IMG_STATUS_BATCH_TOO_SMALL = 51,
  EMB2IMG_STATUS_MISSING_WEIGHT = 52,
  EMB2IMG_STATUS_TRAINING_DIVERGENCE = 53,
  EMB2IMG_STATUS_INVALID_SPEC = 54,
  EMB2IMG_STATUS_NO_FORWARD_CACHE = 55,
  EMB2IMG_STATUS_USAGE = 60,
  EMB2IMG_STATUS_INDEX_OUT_OF_RANGE = 61,
  EMB2IMG_STATUS_PNG = 62,
  EMB2IMG_STATUS_NULL_ARGUMENT = 90,
  EMB2IMG_STATUS_INVALID_UTF8 = 91,
  EMB2IMG_STATUS_PANIC = 99,
} Emb2imgStatus;

/*
 Pretrained extractor placed in front of the trainable layers.
 */
typedef enum Emb2imgExtractor {
  EMB2IMG_EXTRACTOR_NONE = 0,
  EMB2IMG_EXTRACTOR_ALEXNET = 1,
  EMB2IMG_EXTRACTOR_RESNET = 2,
  EMB2IMG_EXTRACTOR_RESNEXT = 3,
  EMB2IMG_EXTRACTOR_SHUFFLENET = 4,
  EMB2IMG_EXTRACTOR_VGG16 = 5,
} Emb2imgExtractor;

typedef struct Emb2imgEmbeddings Emb2imgEmbeddings;

typedef struct Emb2imgImages Emb2imgImages;

typedef struct Emb2imgLayout Emb2imgLayout;

typedef struct Emb2imgModel Emb2imgModel;

typedef struct Emb2imgTsneConfig {
  double perplexity;
  size_t n_iter;
  double learning_rate;
  double early_exaggeration_factor;
  size_t early_exaggeration_iters;
  double momentum_initial;
  double momentum_final;
  size_t momentum_switch_iter;
  uint64_t seed;
} Emb2imgTsneConfig;

typedef struct Emb2imgTrainOptions {
  enum Emb2imgExtractor extractor;
  double cae_lr;
  double clf_lr;
  size_t epochs;
  size_t batch_size;
  double split;
  uint64_t seed;
} Emb2imgTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *emb2img_last_error(void);

/*
 Copy an `n×d` row-major matrix and `n` labels into a new handle.

 # Safety
 `values` must point to `n*d` floats and `labels` to `n` bytes.
 */
enum Emb2imgStatus emb2img_embeddings_new(size_t n,
                                          size_t d,
                                          const float *values,
                                          const uint8_t *labels,
                                          struct Emb2imgEmbeddings **out);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum Emb2imgStatus emb2img_embeddings_load(const char *path, struct Emb2imgEmbeddings **out);

/*
 # Safety
 `m` must be a live handle and `path` a NUL-terminated string.
 */
enum Emb2imgStatus emb2img_embeddings_save(const struct Emb2imgEmbeddings *m, const char *path);

/*
 # Safety
 `m` must be a live handle; `n` and `d` valid pointers.
 */
enum Emb2imgStatus emb2img_embeddings_shape(const struct Emb2imgEmbeddings *m,
                                            size_t *n,
                                            size_t *d);

/*
 # Safety
 `m` must be null or a handle not yet freed.
 */
void emb2img_embeddings_free(struct Emb2imgEmbeddings *m);

struct Emb2imgTsneConfig emb2img_tsne_config_default(void);

/*
 Fit a feature layout: t-SNE on the features, minimum-area rectangle
 alignment, and placement on a `grid_w×grid_h` grid.

 # Safety
 `m` must be a live handle; `cfg` null (defaults) or valid; `out` valid.
 */
enum Emb2imgStatus emb2img_layout_fit(const struct Emb2imgEmbeddings *m,
                                      size_t grid_w,
                                      size_t grid_h,
                                      const struct Emb2imgTsneConfig *cfg,
                                      struct Emb2imgLayout **out);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum Emb2imgStatus emb2img_layout_load(const char *path, struct Emb2imgLayout **out);

/*
 # Safety
 `l` must be a live handle and `path` a NUL-terminated string.
 */
enum Emb2imgStatus emb2img_layout_save(const struct Emb2imgLayout *l, const char *path);

/*
 Copy the row-major `grid_h×grid_w` feature counts into `buf`.

 # Safety
 `l` must be a live handle and `buf` must hold `len` values.
 */
enum Emb2imgStatus emb2img_layout_density(const struct Emb2imgLayout *l, uint32_t *buf, size_t len);

/*
 # Safety
 `l` must be a live handle; `w` and `h` valid pointers.
 */
enum Emb2imgStatus emb2img_layout_grid(const struct Emb2imgLayout *l, size_t *w, size_t *h);

/*
 # Safety
 `l` must be null or a handle not yet freed.
 */
void emb2img_layout_free(struct Emb2imgLayout *l);

/*
 # Safety
 `m` and `l` must be live handles; `out` a valid pointer.
 */
enum Emb2imgStatus emb2img_images_render(const struct Emb2imgEmbeddings *m,
                                         const struct Emb2imgLayout *l,
                                         struct Emb2imgImages **out);

/*
 Z-normalize over all pixels of all images into a new handle.

 # Safety
 `ds` must be a live handle; `out` a valid pointer.
 */
enum Emb2imgStatus emb2img_images_normalize(const struct Emb2imgImages *ds,
                                            float epsilon,
                                            struct Emb2imgImages **out);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum Emb2imgStatus emb2img_images_load(const char *path, struct Emb2imgImages **out);

/*
 # Safety
 `ds` must be a live handle and `path` a NUL-terminated string.
 */
enum Emb2imgStatus emb2img_images_save(const struct Emb2imgImages *ds, const char *path);

/*
 # Safety
 `ds` must be a live handle; the out-pointers valid.
 */
enum Emb2imgStatus emb2img_images_shape(const struct Emb2imgImages *ds,
                                        size_t *n,
                                        size_t *w,
                                        size_t *h);

/*
 Copy all pixels, image-major then row-major, into `buf`.

 # Safety
 `ds` must be a live handle and `buf` must hold `len` floats.
 */
enum Emb2imgStatus emb2img_images_pixels(const struct Emb2imgImages *ds, float *buf, size_t len);

/*
 # Safety
 `ds` must be null or a handle not yet freed.
 */
void emb2img_images_free(struct Emb2imgImages *ds);

struct Emb2imgTrainOptions emb2img_train_options_default(void);

/*
 Train on a normalized dataset. `weights_path` names a TEN1 file with the
 extractor tensors and may be null when no extractor is used. The final
 validation accuracy is written to `val_accuracy` when it is not null.

 # Safety
 `ds` must be a live handle, `opts` and `out` valid pointers, and
 `weights_path` null or NUL-terminated.
 */
enum Emb2imgStatus emb2img_model_train(const struct Emb2imgImages *ds,
                                       const struct Emb2imgTrainOptions *opts,
                                       const char *weights_path,
                                       struct Emb2imgModel **out,
                                       double *val_accuracy);

/*
 # Safety
 `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum Emb2imgStatus emb2img_model_load(const char *path, struct Emb2imgModel **out);

/*
 # Safety
 `model` must be a live handle and `path` a NUL-terminated string.
 */
enum Emb2imgStatus emb2img_model_save(const struct Emb2imgModel *model, const char *path);

/*
 Classification accuracy of `model` on every image of `ds`.

 # Safety
 `model` and `ds` must be live handles; `accuracy` a valid pointer.
 */
enum Emb2imgStatus emb2img_model_evaluate(struct Emb2imgModel *model,
                                          const struct Emb2imgImages *ds,
                                          double *accuracy);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void emb2img_model_free(struct Emb2imgModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMB2IMG_H */
