#ifndef DHRNET_DHRNET_H
#define DHRNET_DHRNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DHR_API __declspec(dllexport)
#else
#define DHR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dhr_status {
    DHR_OK = 0,
    DHR_ERR_CONFIG = 1,
    DHR_ERR_FORMAT = 2,
    DHR_ERR_DIMENSION = 3,
    DHR_ERR_NUMERIC = 4,
    DHR_ERR_USAGE = 5,
    DHR_ERR_IO = 6,
    DHR_ERR_INTERNAL = 7
} dhr_status;

/* Message for the most recent failure on the calling thread. Never NULL. */
DHR_API const char* dhr_last_error(void);
DHR_API const char* dhr_status_name(dhr_status status);

/* ---- configuration ---- */

typedef struct dhr_config dhr_config;

DHR_API dhr_status dhr_config_default(dhr_config** out);
DHR_API dhr_status dhr_config_load(const char* path, dhr_config** out);
DHR_API dhr_status dhr_config_parse(const char* text, dhr_config** out);
DHR_API dhr_status dhr_config_set_seed(dhr_config* config, uint64_t seed);
/* Canonical text form; the pointer lives until the config is freed or changed. */
DHR_API const char* dhr_config_text(const dhr_config* config);
DHR_API void dhr_config_free(dhr_config* config);

/* ---- training ---- */

/* Receives one "step,l_inst,l_joint,total,lr" line per optimizer step. */
typedef void (*dhr_log_fn)(const char* line, void* user);

DHR_API dhr_status dhr_train(const dhr_config* config, const char* checkpoint_path, dhr_log_fn log, void* user);

/* ---- evaluation ---- */

typedef struct dhr_eval_report dhr_eval_report;

/* Evaluates on the config's eval_seeds. */
DHR_API dhr_status dhr_eval(const char* checkpoint_path, const dhr_config* config, dhr_eval_report** out);
/* Same, over [seed_begin, seed_end). */
DHR_API dhr_status dhr_eval_range(const char* checkpoint_path, const dhr_config* config, uint64_t seed_begin,
                                  uint64_t seed_end, dhr_eval_report** out);
DHR_API double dhr_eval_pck(const dhr_eval_report* report);
DHR_API double dhr_eval_radius_frac(const dhr_eval_report* report);
DHR_API size_t dhr_eval_hits(const dhr_eval_report* report);
DHR_API size_t dhr_eval_total(const dhr_eval_report* report);
DHR_API size_t dhr_eval_scenes(const dhr_eval_report* report);
DHR_API size_t dhr_eval_gt_instances(const dhr_eval_report* report);
DHR_API size_t dhr_eval_detected_instances(const dhr_eval_report* report);
DHR_API size_t dhr_eval_joint_count(const dhr_eval_report* report);
DHR_API size_t dhr_eval_joint_hits(const dhr_eval_report* report, size_t joint);
DHR_API size_t dhr_eval_joint_total(const dhr_eval_report* report, size_t joint);
DHR_API void dhr_eval_free(dhr_eval_report* report);

/* ---- gradient check ---- */

typedef struct dhr_gradcheck_result dhr_gradcheck_result;

/* selector: cim, cjm, adfm, ijr, jir, decoder or full. tamper != 0 negates
   one analytic gradient so the check must fail. A failed comparison is still
   DHR_OK; inspect dhr_gradcheck_passed. */
DHR_API dhr_status dhr_gradcheck(const char* selector, uint64_t seed, int tamper, dhr_gradcheck_result** out);
DHR_API size_t dhr_gradcheck_count(const dhr_gradcheck_result* result);
DHR_API const char* dhr_gradcheck_name(const dhr_gradcheck_result* result, size_t index);
DHR_API size_t dhr_gradcheck_size(const dhr_gradcheck_result* result, size_t index);
DHR_API double dhr_gradcheck_max_rel_err(const dhr_gradcheck_result* result, size_t index);
DHR_API int dhr_gradcheck_entry_passed(const dhr_gradcheck_result* result, size_t index);
DHR_API int dhr_gradcheck_passed(const dhr_gradcheck_result* result);
DHR_API double dhr_gradcheck_seconds(const dhr_gradcheck_result* result);
DHR_API double dhr_gradcheck_tolerance(void);
DHR_API void dhr_gradcheck_free(dhr_gradcheck_result* result);

/* ---- attention dumps ---- */

/* Writes CSV/PGM matrices and manifest.txt into out_dir. files_written and
   instances may be NULL. */
DHR_API dhr_status dhr_dump_attention(const char* checkpoint_path, uint64_t scene_seed, const char* out_dir,
                                      size_t* files_written, size_t* instances);

/* ---- checkpoints ---- */

typedef struct dhr_checkpoint dhr_checkpoint;

DHR_API dhr_status dhr_checkpoint_load(const char* path, dhr_checkpoint** out);
DHR_API dhr_status dhr_checkpoint_save(const dhr_checkpoint* ckpt, const char* path);
DHR_API size_t dhr_checkpoint_tensor_count(const dhr_checkpoint* ckpt);
DHR_API const char* dhr_checkpoint_tensor_name(const dhr_checkpoint* ckpt, size_t index);
DHR_API size_t dhr_checkpoint_tensor_numel(const dhr_checkpoint* ckpt, size_t index);
DHR_API const float* dhr_checkpoint_tensor_data(const dhr_checkpoint* ckpt, size_t index);
DHR_API uint64_t dhr_checkpoint_step(const dhr_checkpoint* ckpt);
DHR_API const char* dhr_checkpoint_config_text(const dhr_checkpoint* ckpt);
DHR_API void dhr_checkpoint_free(dhr_checkpoint* ckpt);

#ifdef __cplusplus
}
#endif

#endif
