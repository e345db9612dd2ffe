#ifndef ANATOMATCH_H
#define ANATOMATCH_H

/* C interface to the anatomatch core. All functions return an am_status;
   on failure am_last_error() describes the most recent error on the calling
   thread. Strings returned through char** out-parameters are owned by the
   caller and released with am_string_free. Structured inputs and outputs are
   UTF-8 JSON documents. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(ANATOMATCH_BUILDING)
#    define AM_API __declspec(dllexport)
#  else
#    define AM_API __declspec(dllimport)
#  endif
#else
#  define AM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum am_status {
  AM_OK = 0,
  AM_ERR_VALIDATION = 1,
  AM_ERR_BOUNDS = 2,
  AM_ERR_FORMAT = 3,
  AM_ERR_TRUNCATED = 4,
  AM_ERR_LENGTH = 5,
  AM_ERR_IO = 6,
  AM_ERR_NUMERICAL = 7,
  AM_ERR_INTERNAL = 8
} am_status;

typedef struct am_volume am_volume; /* embedding volume */
typedef struct am_labels am_labels; /* label volume */

AM_API const char* am_version(void);
AM_API const char* am_last_error(void);
AM_API const char* am_status_name(am_status s);
AM_API void am_string_free(char* s);

/* 0 = hardware concurrency. */
AM_API am_status am_set_threads(int n);

/* ---- volumes ---- */
AM_API am_status am_volume_create(const int64_t dims[3], int channels, const double spacing_mm[3],
                                  const float* data, int normalized, am_volume** out);
AM_API am_status am_volume_read(const char* path, am_volume** out);
AM_API am_status am_volume_write(const am_volume* v, const char* path);
AM_API am_status am_volume_normalize(const am_volume* v, am_volume** out, int64_t* zero_vectors);
AM_API am_status am_volume_concat(const am_volume* app, const am_volume* sem, double weight,
                                  am_volume** out);
AM_API am_status am_volume_dims(const am_volume* v, int64_t dims[3], int* channels);
AM_API am_status am_volume_at(const am_volume* v, const int64_t point[3], float* out, int capacity);
AM_API const float* am_volume_data(const am_volume* v);
AM_API void am_volume_free(am_volume* v);

AM_API am_status am_labels_read(const char* path, am_labels** out);
AM_API am_status am_labels_write(const am_labels* l, const char* path);
AM_API am_status am_labels_dims(const am_labels* l, int64_t dims[3], int* num_classes);
AM_API void am_labels_free(am_labels* l);

/* ---- matching ----
   config_json: {"mode","cube","tau_dis","max_iter","min_points","keep_traces"}, all optional;
   NULL means defaults. Result is a MatchResult document. */
AM_API am_status am_match(const am_volume* templ, const am_volume* query, const int64_t point[3],
                          const char* config_json, char** result_json);
AM_API am_status am_match_files(const char* template_path, const char* query_path,
                                const int64_t point[3], const char* config_json, char** result_json);

/* ---- experiments ---- */
AM_API am_status am_phantom_generate(const char* config_json, const char* out_dir, char** manifest_json);
AM_API am_status am_phantom_pair(const char* config_json, const char* out_dir, char** manifest_json);
AM_API am_status am_phantom_corrupt(const char* config_json, const char* out_dir, char** manifest_json);
AM_API am_status am_eval(const char* predictions_json, const char* truth_json, char** summary_json,
                         char** table);
AM_API am_status am_eval_files(const char* predictions_path, const char* truth_path,
                               char** summary_json, char** table);
AM_API am_status am_ablation(const char* config_json, char** report_json, char** table);
AM_API am_status am_loss_check(uint64_t seed, int inject_wrong_gradient, char** report_json);
AM_API am_status am_train_toy(const char* config_json, const char* out_dir, char** report_json);

#ifdef __cplusplus
}
#endif

#endif
