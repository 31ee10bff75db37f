/* C interface to the dolphin core: audio-visual fusion model at desk scale
 * plus the AVU dataset-curation pipeline. All entry points return a status
 * code; string results are heap-allocated and released with
 * dolphin_string_free. Handles are opaque and single-threaded. */
#ifndef DOLPHIN_DOLPHIN_H
#define DOLPHIN_DOLPHIN_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

enum dolphin_status {
    DOLPHIN_OK = 0,
    DOLPHIN_ERR_VALIDATION = 2,
    DOLPHIN_ERR_NUMERIC = 3,
    DOLPHIN_ERR_IO = 4
};

typedef struct dolphin_config dolphin_config;

/* Built-in toy defaults. Never returns NULL. */
dolphin_config* dolphin_config_default(void);

/* Parse a config file ([model]/[train]/[pipeline] sections, key = value
 * lines) and apply DOLPHIN_<SECTION>_<KEY> environment overrides. Returns
 * NULL on error; see dolphin_last_error. */
dolphin_config* dolphin_config_load(const char* path);

/* Override one scalar, e.g. dolphin_config_set(cfg, "model.dim", "16"). */
int dolphin_config_set(dolphin_config* cfg, const char* key, const char* value);

void dolphin_config_free(dolphin_config* cfg);

/* Serialized view of the effective config. */
int dolphin_config_dump(const dolphin_config* cfg, char** out_text);

/* Multi-scale segment lengths, token counts and parameter totals. */
int dolphin_shapes(const dolphin_config* cfg, char** out_report);

/* Finite-difference gradient checks over every block type. Returns
 * DOLPHIN_ERR_NUMERIC when any block fails; the report is produced either
 * way. */
int dolphin_gradcheck(const dolphin_config* cfg, char** out_report);

/* Seeded overfit run under the configured freeze stage. Writes one JSON
 * line per step to report_path (pass NULL to skip the file). */
int dolphin_train(const dolphin_config* cfg, const char* report_path, char** out_summary);

/* Run the curation pipeline over a line-delimited record corpus. The
 * output file is written atomically. */
int dolphin_curate(const dolphin_config* cfg, const char* input_path, const char* output_path, char** out_stats);

void dolphin_string_free(char* s);

/* Message for the most recent failure on this thread ("" if none). */
const char* dolphin_last_error(void);

#ifdef __cplusplus
}
#endif

#endif /* DOLPHIN_DOLPHIN_H */
