#ifndef CFIL_CFIL_H
#define CFIL_CFIL_H

/* C interface to the kinship verification library. Every handle is opaque and
 * owned by the caller, who releases it with the matching *_free function.
 * Functions that can fail return a cfil_status; on failure the message is
 * available from cfil_last_error() until the next call on the same thread. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(CFIL_BUILDING_LIBRARY)
#define CFIL_API __declspec(dllexport)
#else
#define CFIL_API __declspec(dllimport)
#endif
#else
#define CFIL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as process exit codes. */
typedef enum cfil_status {
  CFIL_OK = 0,
  CFIL_CHECK_FAILED = 1,
  CFIL_USAGE = 2,
  CFIL_IO = 3,
  CFIL_INCOMPATIBLE = 4
} cfil_status;

typedef enum cfil_sign_mode { CFIL_SIGN_POSITIVE = 0, CFIL_SIGN_NEGATED = 1 } cfil_sign_mode;

typedef struct cfil_dataset cfil_dataset;
typedef struct cfil_checkpoint cfil_checkpoint;
typedef struct cfil_report cfil_report;

CFIL_API const char* cfil_last_error(void);
CFIL_API const char* cfil_status_name(cfil_status status);

/* Synthetic data */

typedef struct cfil_data_options {
  int family_count;
  int latent_dim;
  double rho;
  double sigma;
  double gain;
  int image_size;
} cfil_data_options;

CFIL_API void cfil_data_options_default(cfil_data_options* options);
CFIL_API cfil_status cfil_dataset_generate(const cfil_data_options* options, uint64_t seed, cfil_dataset** out);
/* Writes <dir>/manifest.csv and <dir>/images/. */
CFIL_API cfil_status cfil_dataset_save(const cfil_dataset* dataset, const char* dir);
/* Accepts a manifest file or a directory holding manifest.csv. */
CFIL_API cfil_status cfil_dataset_load(const char* path, cfil_dataset** out);
CFIL_API void cfil_dataset_free(cfil_dataset* dataset);
CFIL_API size_t cfil_dataset_size(const cfil_dataset* dataset);
CFIL_API size_t cfil_dataset_positives(const cfil_dataset* dataset);
/* Side length of the square images, or 0 for an empty dataset. */
CFIL_API int cfil_dataset_image_size(const cfil_dataset* dataset);
/* CFIL_CHECK_FAILED lists the violated protocol invariants in cfil_last_error(). */
CFIL_API cfil_status cfil_dataset_verify(const cfil_dataset* dataset);

/* Training */

typedef struct cfil_train_options {
  int batch_size;
  int epochs;
  uint64_t seed;
  double width_scale;
  cfil_sign_mode sign_mode;
  int zero_head;
  int image_size;
} cfil_train_options;

typedef struct cfil_epoch_log {
  int epoch;
  double lr;
  double mean_loss;
  double train_acc; /* fraction in [0, 1] */
} cfil_epoch_log;

typedef void (*cfil_epoch_callback)(const cfil_epoch_log* entry, void* user);

CFIL_API void cfil_train_options_default(cfil_train_options* options);

/* Trains on every fold except `fold` (1..5). A non-null `resume` continues that
 * checkpoint up to options->epochs; its stored settings must match `options`. */
CFIL_API cfil_status cfil_train(const cfil_dataset* dataset, int fold, const cfil_train_options* options,
                                const cfil_checkpoint* resume, cfil_epoch_callback on_epoch, void* user,
                                cfil_checkpoint** out);
CFIL_API cfil_status cfil_checkpoint_save(const cfil_checkpoint* checkpoint, const char* path);
CFIL_API cfil_status cfil_checkpoint_load(const char* path, cfil_checkpoint** out);
CFIL_API void cfil_checkpoint_free(cfil_checkpoint* checkpoint);
CFIL_API void cfil_checkpoint_options(const cfil_checkpoint* checkpoint, cfil_train_options* options);
CFIL_API int cfil_checkpoint_fold(const cfil_checkpoint* checkpoint);
CFIL_API int cfil_checkpoint_epochs_done(const cfil_checkpoint* checkpoint);
/* Writes the `epoch,lr,mean_loss,train_acc` table. */
CFIL_API cfil_status cfil_write_log(const char* path, const cfil_epoch_log* entries, size_t count);

/* Evaluation */

/* Scores the held-out `fold`, or the other four folds when `on_train` is
 * nonzero. */
CFIL_API cfil_status cfil_evaluate(const cfil_dataset* dataset, int fold, int on_train,
                                   const cfil_checkpoint* checkpoint, cfil_report** out);

/* Undefined rates are NaN. Accuracies are percentages. */
typedef struct cfil_report_summary {
  int fold;
  int64_t tp, tn, fp, fn;
  double acc;
  double mva;
  double wa;
  double tpr;
  double fpr;
  double auc;
  double relation_acc[4]; /* F-S, F-D, M-S, M-D */
} cfil_report_summary;

CFIL_API void cfil_report_summary_get(const cfil_report* report, cfil_report_summary* out);
/* Writes roc.csv, report.csv and roc.svg into dir. */
CFIL_API cfil_status cfil_report_export(const cfil_report* report, const char* dir);
CFIL_API void cfil_report_free(cfil_report* report);

/* Gradient self-check */

typedef struct cfil_gradcheck_options {
  double width_scale;
  int trials;
  double tolerance;
  uint64_t seed;
} cfil_gradcheck_options;

typedef struct cfil_suite_result {
  char name[32];
  char worst[96];
  double max_error;
  double tolerance;
  int passed;
} cfil_suite_result;

CFIL_API void cfil_gradcheck_options_default(cfil_gradcheck_options* options);
/* Fills up to `capacity` results and stores the total in *count. Returns
 * CFIL_CHECK_FAILED when any suite misses its tolerance. */
CFIL_API cfil_status cfil_gradcheck(const cfil_gradcheck_options* options, cfil_suite_result* results,
                                    size_t capacity, size_t* count);

#ifdef __cplusplus
}
#endif

#endif
