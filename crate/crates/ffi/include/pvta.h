#ifndef PVTA_H
#define PVTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PvtaStatus {
  PVTA_STATUS_OK = 0,
  PVTA_STATUS_NULL_ARGUMENT = 1,
  PVTA_STATUS_INVALID_UTF8 = 2,
  PVTA_STATUS_CONFIG = 3,
  PVTA_STATUS_INVALID_WORKSPACE = 4,
  PVTA_STATUS_MALFORMED_KB = 5,
  PVTA_STATUS_UNKNOWN_SESSION = 6,
  PVTA_STATUS_INVALID_ARGUMENT = 7,
  PVTA_STATUS_ESCALATION_NOT_FOUND = 8,
  PVTA_STATUS_ALREADY_RESOLVED = 9,
  PVTA_STATUS_UNKNOWN_INTENT = 10,
  PVTA_STATUS_INTERNAL = 11,
  PVTA_STATUS_PANIC = 12,
} PvtaStatus;

/**
 * Opaque engine handle.
 */
typedef struct PvtaEngine PvtaEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens an engine from a TOML config file, replaying its event logs.
 *
 * # Safety
 * `config_path` must be a valid C string; `out` must be writable.
 */
enum PvtaStatus pvta_engine_open(const char *config_path, struct PvtaEngine **out);

/**
 * Opens an in-memory engine from workspace and KB JSON documents. Nothing
 * is persisted.
 *
 * # Safety
 * String arguments must be valid C strings; `out` must be writable.
 */
enum PvtaStatus pvta_engine_open_json(const char *workspace_json,
                                      const char *kb_json,
                                      double threshold,
                                      double smoothing,
                                      struct PvtaEngine **out);

/**
 * # Safety
 * `engine` must come from an open function and not have been freed. Null is ignored.
 */
void pvta_engine_free(struct PvtaEngine *engine);

/**
 * Writes the new session id (a plain string, not JSON) to `out_session_id`.
 *
 * # Safety
 * Pointers must be valid; the result must be freed with `pvta_string_free`.
 */
enum PvtaStatus pvta_session_create(const struct PvtaEngine *engine,
                                    const char *student_id,
                                    char **out_session_id);

/**
 * Posts a student message. The reply JSON has the same shape as the HTTP
 * message endpoint: `{answer?, pending, intent, confidence, escalated, escalation_id?}`.
 *
 * # Safety
 * Pointers must be valid; the result must be freed with `pvta_string_free`.
 */
enum PvtaStatus pvta_post_message(const struct PvtaEngine *engine,
                                  const char *session_id,
                                  const char *text,
                                  char **out_json);

/**
 * Full turn history of a session as a JSON array.
 *
 * # Safety
 * Pointers must be valid; the result must be freed with `pvta_string_free`.
 */
enum PvtaStatus pvta_session_turns(const struct PvtaEngine *engine,
                                   const char *session_id,
                                   char **out_json);

/**
 * Ranked intents for `text` as `{"ranked": [{"intent", "confidence"}...]}`.
 *
 * # Safety
 * Pointers must be valid; the result must be freed with `pvta_string_free`.
 */
enum PvtaStatus pvta_classify(const struct PvtaEngine *engine, const char *text, char **out_json);

/**
 * Pending escalations as a JSON array.
 *
 * # Safety
 * Pointers must be valid; the result must be freed with `pvta_string_free`.
 */
enum PvtaStatus pvta_escalations_pending(const struct PvtaEngine *engine, char **out_json);

/**
 * Resolves an escalation; writes the resolved item as JSON.
 *
 * # Safety
 * Pointers must be valid; the result must be freed with `pvta_string_free`.
 */
enum PvtaStatus pvta_resolve(const struct PvtaEngine *engine,
                             uint64_t escalation_id,
                             const char *final_answer,
                             const char *corrected_intent,
                             char **out_json);

/**
 * Retrains and publishes; writes `{revision, intent_count, example_count}`.
 *
 * # Safety
 * Pointers must be valid; the result must be freed with `pvta_string_free`.
 */
enum PvtaStatus pvta_retrain(const struct PvtaEngine *engine, char **out_json);

/**
 * # Safety
 * Pointers must be valid; the result must be freed with `pvta_string_free`.
 */
enum PvtaStatus pvta_health(const struct PvtaEngine *engine, char **out_json);

/**
 * # Safety
 * `s` must come from this library and not have been freed. Null is ignored.
 */
void pvta_string_free(char *s);

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next pvta call on the same thread; do not free it.
 */
const char *pvta_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PVTA_H */
