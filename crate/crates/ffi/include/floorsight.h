#ifndef FLOORSIGHT_H
#define FLOORSIGHT_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum FsStatus {
  FS_STATUS_OK = 0,
  FS_STATUS_NULL_POINTER = 1,
  FS_STATUS_INVALID_UTF8 = 2,
  /**
   * Input rejected by a validator.
   */
  FS_STATUS_INVALID = 3,
  FS_STATUS_IO = 4,
  /**
   * The engine was already finished.
   */
  FS_STATUS_FINISHED = 5,
  FS_STATUS_PANIC = 6,
} FsStatus;

/**
 * Opaque streaming engine.
 */
typedef struct FsEngine FsEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Free with [`fs_string_free`].
 */
char *fs_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not be freed twice. Null is ignored.
 */
void fs_string_free(char *s);

/**
 * Creates an engine with default parameters for `n` participants.
 *
 * # Safety
 * `ids` points to `n` NUL-terminated strings; `out` is writable.
 */
enum FsStatus fs_engine_new(const char *const *ids, size_t n, bool no_cues, struct FsEngine **out);

/**
 * # Safety
 * `e` must come from [`fs_engine_new`] and not be freed twice. Null is ignored.
 */
void fs_engine_free(struct FsEngine *e);

/**
 * Notice that `participant` started speaking at `t`.
 *
 * # Safety
 * `e` is a live engine; `participant` is a NUL-terminated string.
 */
enum FsStatus fs_engine_speech_start(struct FsEngine *e, const char *participant, double t);

/**
 * A completed voiced segment.
 *
 * # Safety
 * `e` is a live engine; `participant` is a NUL-terminated string.
 */
enum FsStatus fs_engine_segment(struct FsEngine *e,
                                const char *participant,
                                double t0,
                                double t1,
                                double e_mean,
                                double e_peak);

/**
 * Moves the clock forward without new speech.
 *
 * # Safety
 * `e` is a live engine.
 */
enum FsStatus fs_engine_advance(struct FsEngine *e, double now);

/**
 * Current floor of `participant`; 0 when unaffiliated.
 *
 * # Safety
 * `e` is a live engine; `floor` is writable.
 */
enum FsStatus fs_engine_floor_of(struct FsEngine *e, const char *participant, uint32_t *floor);

/**
 * Closes the session and returns every label as CSV. The engine accepts
 * no further input afterwards.
 *
 * # Safety
 * `e` is a live engine; `out_csv` is writable. Free the result with [`fs_string_free`].
 */
enum FsStatus fs_engine_finish(struct FsEngine *e, char **out_csv);

/**
 * Simulates a session into `out_dir` as a session bundle.
 *
 * # Safety
 * `preset_name` and `out_dir` are NUL-terminated strings.
 */
enum FsStatus fs_simulate(const char *preset_name,
                          double duration,
                          uint64_t seed,
                          const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOORSIGHT_H */
