/*
 * gridvla — desk-scale vision-language assistant for power transmission line
 * inspection.
 *
 * C API over the C++ core: opaque handles, status codes, UTF-8 strings.
 * Strings returned through char** are heap-allocated; release them with
 * gridvla_string_free. Handles are freed with their matching *_free call.
 * The last error message for the calling thread is available through
 * gridvla_last_error.
 */

#ifndef GRIDVLA_H
#define GRIDVLA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gridvla_status {
    GRIDVLA_OK = 0,
    GRIDVLA_ERR_USAGE     = 1, /* bad arguments or missing inputs */
    GRIDVLA_ERR_IO        = 2,
    GRIDVLA_ERR_PARSE     = 3,
    GRIDVLA_ERR_DIMENSION = 4,
    GRIDVLA_ERR_VOCAB     = 5,
    GRIDVLA_ERR_LENGTH    = 6, /* sequence exceeds the model context */
    GRIDVLA_ERR_STATE     = 7,
    GRIDVLA_ERR_NUMERIC   = 8,
    GRIDVLA_ERR_INTERNAL  = 9,
} gridvla_status;

typedef struct gridvla_config  gridvla_config;  /* resolved run configuration */
typedef struct gridvla_model   gridvla_model;   /* weights + model geometry */
typedef struct gridvla_chat    gridvla_chat;    /* multi-turn session */

const char * gridvla_version(void);
const char * gridvla_status_name(gridvla_status status);

/* Message describing the most recent failure on this thread. */
const char * gridvla_last_error(void);

void gridvla_string_free(char * s);

/* -- configuration -------------------------------------------------------- */

/* Defaults for every key; layer a file and explicit overrides on top. */
gridvla_status gridvla_config_new(gridvla_config ** out_config);
gridvla_status gridvla_config_load_file(gridvla_config * config, const char * path);
gridvla_status gridvla_config_set(gridvla_config * config, const char * key, const char * value);
gridvla_status gridvla_config_get(const gridvla_config * config, const char * key, char ** out_value);
/* Hex FNV-1a64 of the resolved key=value text; embedded in every artifact. */
gridvla_status gridvla_config_hash(const gridvla_config * config, char ** out_hex);
void gridvla_config_free(gridvla_config * config);

/* -- models --------------------------------------------------------------- */

gridvla_status gridvla_model_new(const gridvla_config * config, uint64_t seed, gridvla_model ** out_model);
gridvla_status gridvla_model_load(const char * checkpoint_path, gridvla_model ** out_model);
gridvla_status gridvla_model_save(const gridvla_model * model, const char * checkpoint_path);
/* Model geometry as a JSON string. */
gridvla_status gridvla_model_config_json(const gridvla_model * model, char ** out_json);
void gridvla_model_free(gridvla_model * model);

/* Single-round generation. image_ppm_path may be NULL for text-only prompts;
 * temperature <= 0 selects greedy decoding. */
gridvla_status gridvla_generate(const gridvla_model * model, const char * image_ppm_path,
                                const char * instruction, const char * system_prompt,
                                int max_new_tokens, double temperature, uint64_t seed,
                                char ** out_text);

/* -- workflows ------------------------------------------------------------ */

/* Synthesizes the instruction dataset (dataset.jsonl), the single-turn
 * alignment pairs (pairs.jsonl) and manifest.json under out_dir, driving the
 * backend selected by the configuration. detections_path may be NULL. */
gridvla_status gridvla_data_generate(const gridvla_config * config, const char * captions_path,
                                     const char * detections_path, const char * templates_path,
                                     const char * out_dir);

typedef void (*gridvla_step_fn)(int64_t step, double lr, double loss, int64_t tokens, void * user);

/* Runs one training stage over a dataset file. Stage 1 starts from a fresh
 * seeded model unless init_checkpoint_path is given; stage 2 requires an
 * earlier checkpoint. Writes loss.csv and stage<N>_final.ckpt under out_dir
 * and returns the final checkpoint path. on_step may be NULL. */
gridvla_status gridvla_train(const gridvla_config * config, int stage, const char * dataset_path,
                             const char * init_checkpoint_path, const char * out_dir,
                             gridvla_step_fn on_step, void * user,
                             char ** out_checkpoint_path);

/* Zero-shot multiple-choice evaluation with greedy decoding. Writes the
 * report JSON to report_path when non-NULL; always returns the report JSON
 * and the accuracy. */
gridvla_status gridvla_eval(const gridvla_config * config, const char * checkpoint_path,
                            const char * items_path, const char * report_path,
                            double * out_accuracy, char ** out_report_json);

/* -- chat sessions -------------------------------------------------------- */

/* system_prompt NULL selects the configured default. temperature <= 0 is
 * greedy. The model must outlive the session. */
gridvla_status gridvla_chat_new(const gridvla_model * model, const char * system_prompt,
                                int max_new_tokens, double temperature, uint64_t seed,
                                gridvla_chat ** out_chat);
/* Only before the first turn. */
gridvla_status gridvla_chat_set_image(gridvla_chat * chat, const char * image_ppm_path);
gridvla_status gridvla_chat_turn(gridvla_chat * chat, const char * user_text, char ** out_response);
void gridvla_chat_free(gridvla_chat * chat);

#ifdef __cplusplus
}
#endif

#endif /* GRIDVLA_H */
