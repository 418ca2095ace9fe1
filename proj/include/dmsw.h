#ifndef DMSW_H
#define DMSW_H

#include <stddef.h>

#if defined(_WIN32)
#define DMSW_API __declspec(dllexport)
#else
#define DMSW_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  DMSW_OK = 0,
  DMSW_USAGE_ERROR = 1,
  DMSW_DATA_ERROR = 2,
  DMSW_NUMERIC_ERROR = 3
} dmsw_status;

typedef struct dmsw_config dmsw_config;
typedef struct dmsw_cohort dmsw_cohort;
typedef struct dmsw_model dmsw_model;
typedef struct dmsw_report dmsw_report;

/* Message of the last failed call on this thread ("" if none). */
DMSW_API const char* dmsw_last_error(void);
DMSW_API const char* dmsw_version(void);
DMSW_API void dmsw_string_free(char* s);

/* Configuration: defaults, then a JSON file, then individual keys. */
DMSW_API dmsw_status dmsw_config_new(dmsw_config** out);
DMSW_API dmsw_status dmsw_config_load(const char* path, dmsw_config** out);
DMSW_API void dmsw_config_free(dmsw_config* cfg);
/* Value in flag syntax: numbers, true/false, comma-separated lists. */
DMSW_API dmsw_status dmsw_config_set(dmsw_config* cfg, const char* key, const char* value);
DMSW_API dmsw_status dmsw_config_set_json(dmsw_config* cfg, const char* json_object);
/* Caller frees *json_out with dmsw_string_free. */
DMSW_API dmsw_status dmsw_config_get(const dmsw_config* cfg, const char* key, char** json_out);
DMSW_API dmsw_status dmsw_config_echo(const dmsw_config* cfg, char** json_out);
DMSW_API dmsw_status dmsw_config_validate(const dmsw_config* cfg);

/* Key registry, sorted by name. */
DMSW_API size_t dmsw_key_count(void);
DMSW_API const char* dmsw_key_name(size_t index);
DMSW_API const char* dmsw_key_type(size_t index);
DMSW_API const char* dmsw_key_help(size_t index);
/* 1 if the subcommand reads the key, 0 if not, -1 for an unknown subcommand. */
DMSW_API int dmsw_command_honors(const char* command, const char* key);

DMSW_API dmsw_status dmsw_cohort_load(const dmsw_config* cfg, const char* dir, dmsw_cohort** out);
DMSW_API dmsw_status dmsw_cohort_generate(const dmsw_config* cfg, dmsw_cohort** out);
DMSW_API void dmsw_cohort_free(dmsw_cohort* cohort);
DMSW_API size_t dmsw_cohort_size(const dmsw_cohort* cohort);
/* Label of student `index`: 0/1, or -1 when unlabeled. */
DMSW_API int dmsw_cohort_label(const dmsw_cohort* cohort, size_t index);
DMSW_API dmsw_status dmsw_cohort_write(const dmsw_cohort* cohort, const char* dir);

DMSW_API dmsw_status dmsw_model_load(const char* path, dmsw_model** out);
DMSW_API void dmsw_model_free(dmsw_model* model);
/* Fills `count` = cohort size entries of each output array. */
DMSW_API dmsw_status dmsw_model_predict(const dmsw_model* model, const dmsw_cohort* cohort, double* probabilities,
                                        int* labels, size_t count);

/* Runs a subcommand (synth, preprocess, train, predict, evaluate, ols,
   stats, ablate, gradcheck), writing its data outputs. On DMSW_OK *out holds
   the report. A failed built-in check (gradcheck) still yields a report and
   returns DMSW_NUMERIC_ERROR. */
DMSW_API dmsw_status dmsw_run(const char* command, const dmsw_config* cfg, dmsw_report** out);
DMSW_API void dmsw_report_free(dmsw_report* report);
DMSW_API const char* dmsw_report_json(const dmsw_report* report);
DMSW_API const char* dmsw_report_text(const dmsw_report* report);
DMSW_API const char* dmsw_report_stem(const dmsw_report* report);
/* Writes <stem>.json and <stem>.txt into dir (created if needed). */
DMSW_API dmsw_status dmsw_report_write(const dmsw_report* report, const char* dir);

#ifdef __cplusplus
}
#endif

#endif
