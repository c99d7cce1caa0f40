#ifndef SKILLFORGE_H
#define SKILLFORGE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_ARGUMENT = 1,
  SF_STATUS_INVALID_UTF8 = 2,
  SF_STATUS_IO = 3,
  SF_STATUS_PARSE = 4,
  SF_STATUS_NO_SUCH_SKILL = 5,
  SF_STATUS_NO_SUCH_APP = 6,
  SF_STATUS_STORE_CORRUPT = 7,
  SF_STATUS_INVALID_INPUT = 8,
  SF_STATUS_ENGINE = 9,
  SF_STATUS_PANIC = 10,
} SfStatus;

/**
 * Opaque engine handle: a simulated device, a scripted policy and a skill
 * library.
 */
typedef struct SfEngine SfEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine. `store` may be null for an in-memory library.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum SfStatus sf_engine_new(const char *scenarios,
                            const char *policy,
                            const char *keywords,
                            const char *store,
                            uint64_t seed,
                            struct SfEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must come from [`sf_engine_new`] and not be used afterwards.
 */
void sf_engine_free(struct SfEngine *engine);

/**
 * Runs a plan given as JSON text. Writes the report JSON to `report_out`
 * and, when `rounds_out` is not null, the per-round JSONL log.
 *
 * # Safety
 * `engine` must be live; `plan_json` NUL-terminated; outputs writable or null
 * where allowed.
 */
enum SfStatus sf_engine_run_plan(struct SfEngine *engine_ptr,
                                 const char *plan_json,
                                 char **report_out,
                                 char **rounds_out);

/**
 * Matches one instruction against the engine's library and writes the
 * match result as JSON.
 *
 * # Safety
 * `engine` must be live; `instruction` NUL-terminated; `out` writable.
 */
enum SfStatus sf_engine_match(struct SfEngine *engine_ptr, const char *instruction, char **out);

/**
 * Number of skills in the library, counting each id once.
 *
 * # Safety
 * `engine` must be live; `out` writable.
 */
enum SfStatus sf_engine_skill_count(struct SfEngine *engine_ptr, uint64_t *out);

/**
 * Exports the engine's library as one JSON document.
 *
 * # Safety
 * `engine` must be live; `out` writable.
 */
enum SfStatus sf_engine_export(struct SfEngine *engine_ptr, char **out);

/**
 * Scores a locator against every node of a tree. `bindings_json` may be
 * null. The output holds the best strict and relaxed matches and the
 * per-node scores.
 *
 * # Safety
 * String arguments must be null (where allowed) or NUL-terminated; `out`
 * must be writable.
 */
enum SfStatus sf_score(const char *locator_json,
                       const char *tree_json,
                       const char *bindings_json,
                       char **out);

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on the same thread. Do not free.
 */
const char *sf_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void sf_string_free(char *s);

/**
 * Library version as a static string. Do not free.
 */
const char *sf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKILLFORGE_H */
