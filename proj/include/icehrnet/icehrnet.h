#ifndef ICEHRNET_ICEHRNET_H
#define ICEHRNET_ICEHRNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(IHN_BUILDING_LIBRARY)
#define IHN_API __attribute__((visibility("default")))
#else
#define IHN_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes for 0-3. */
typedef enum ihn_status {
  IHN_OK = 0,
  IHN_ERR_VALIDATION = 1,
  IHN_ERR_DIVERGENCE = 2,
  IHN_ERR_ZERO_SHOT = 3,
  IHN_ERR_IO = 4,
  IHN_ERR_INTERNAL = 5
} ihn_status;

/* Message of the last failed call on this thread; "" if none. */
IHN_API const char* ihn_last_error(void);
IHN_API const char* ihn_version(void);

/* Optional seed override: pass NULL to keep the configured seed. */
typedef const uint64_t* ihn_seed;

/* ---- datasets ---------------------------------------------------------- */

typedef struct ihn_manifest ihn_manifest;

/* Loads a manifest and validates every sample it references. */
IHN_API ihn_status ihn_manifest_load(const char* path, ihn_manifest** out);
IHN_API int ihn_manifest_num_classes(const ihn_manifest* m);
IHN_API size_t ihn_manifest_num_samples(const ihn_manifest* m);
/* split: "train", "val" or "test"; returns 0 for an unknown split name. */
IHN_API size_t ihn_manifest_split_size(const ihn_manifest* m, const char* split);
IHN_API void ihn_manifest_free(ihn_manifest* m);

/* Generates source/, target/ and style_bank/ under out_dir. config_path may
   be NULL (defaults) or a JSON file whose "synthetic" object is used. */
IHN_API ihn_status ihn_synth(const char* config_path, const char* out_dir, ihn_seed seed);

/* ---- style transfer ---------------------------------------------------- */

typedef struct ihn_stylize_options {
  const char* mode;           /* "none", "conventional" or "advanced" */
  const char* bank;           /* style_bank.json; unused for "none" */
  const char* backend;        /* "statistical" (default when NULL) or "neural" */
  const char* color_space;    /* "opponent" (default when NULL) or "rgb" */
  const char* neural_weights; /* tensor blob, neural backend only */
  double alpha;               /* neural feature blend in [0, 1] */
  uint64_t seed;
} ihn_stylize_options;

IHN_API void ihn_stylize_options_init(ihn_stylize_options* o);

/* Stylizes every sample of in_manifest into a new dataset under out_dir. */
IHN_API ihn_status ihn_stylize(const char* in_manifest, const char* out_dir, const ihn_stylize_options* options);

/* AdaIN on a (1, C, H, W) content and (1, C, Hs, Ws) style array. */
IHN_API ihn_status ihn_adain(const double* content, int channels, int height, int width, const double* style,
                             int style_height, int style_width, double epsilon, double* out);

/* ---- models ------------------------------------------------------------ */

typedef struct ihn_model ihn_model;

/* seg_config_json: JSON text of a segmentation config, NULL for toy/2. */
IHN_API ihn_status ihn_model_create(const char* seg_config_json, uint64_t seed, ihn_model** out);
/* stem: checkpoint path without the .bin/.json suffix. */
IHN_API ihn_status ihn_model_load(const char* stem, ihn_model** out);
IHN_API ihn_status ihn_model_save(const ihn_model* model, const char* stem);
IHN_API size_t ihn_model_parameter_count(const ihn_model* model);
IHN_API int ihn_model_num_classes(const ihn_model* model);
IHN_API int ihn_model_backbone_channels(const ihn_model* model);
/* Evaluation-mode logits for a normalized (n, 3, h, w) input; out holds
   n * num_classes * h * w values. */
IHN_API ihn_status ihn_model_forward(const ihn_model* model, const double* input, int n, int height, int width,
                                     double* out, size_t out_len);
/* Class indices for one interleaved RGB image; mask_out holds h * w bytes. */
IHN_API ihn_status ihn_model_predict_rgb(const ihn_model* model, const uint8_t* rgb, int height, int width,
                                         uint8_t* mask_out);
IHN_API void ihn_model_free(ihn_model* model);

/* ---- training and evaluation ------------------------------------------- */

typedef struct ihn_report ihn_report;

/* Trains on the train split of manifest, validating on its val split. The
   config JSON may carry "seg_config" and "train_config". Writes
   train_log.txt, final.bin/.json and best.bin/.json under out_dir. */
IHN_API ihn_status ihn_train(const char* config_path, const char* manifest, const char* out_dir, ihn_seed seed);

/* Evaluates a checkpoint on one split ("test" when NULL). report_path may be
   NULL; out may be NULL. */
IHN_API ihn_status ihn_evaluate(const char* checkpoint_stem, const char* manifest, const char* split,
                                const char* report_path, ihn_report** out);

IHN_API double ihn_report_accuracy(const ihn_report* r);
IHN_API double ihn_report_miou(const ihn_report* r);
IHN_API int ihn_report_num_classes(const ihn_report* r);
/* NaN for classes absent from both prediction and ground truth. */
IHN_API double ihn_report_class_iou(const ihn_report* r, int cls);
IHN_API uint64_t ihn_report_confusion(const ihn_report* r, int truth, int pred);
/* JSON rendering owned by the report. */
IHN_API const char* ihn_report_json(const ihn_report* r);
IHN_API void ihn_report_free(ihn_report* r);

/* ---- experiments ------------------------------------------------------- */

/* One arm ("supervised", "none", "conventional", "advanced"). With
   synthetic parameters and no manifests, domains are generated under
   out_dir/data first. */
IHN_API ihn_status ihn_experiment(const char* config_path, const char* arm, const char* out_dir, ihn_seed seed,
                                  ihn_report** out);

typedef struct ihn_matrix ihn_matrix;

/* Every configured arm for every configured seed. A seed override shifts
   the seed list to seed, seed + 1, ... */
IHN_API ihn_status ihn_matrix_run(const char* config_path, const char* out_dir, ihn_seed seed, ihn_matrix** out);
IHN_API const char* ihn_matrix_table(const ihn_matrix* m);
/* Median over seeds; NaN when the arm was not run or failed. */
IHN_API double ihn_matrix_median_miou(const ihn_matrix* m, const char* arm);
/* Error message of a failed arm, NULL when it succeeded. */
IHN_API const char* ihn_matrix_arm_error(const ihn_matrix* m, const char* arm);
/* Status of an arm: IHN_OK when it succeeded or was not run. */
IHN_API ihn_status ihn_matrix_arm_status(const ihn_matrix* m, const char* arm);
IHN_API void ihn_matrix_free(ihn_matrix* m);

#ifdef __cplusplus
}
#endif

#endif
