#ifndef TUTOR_H
#define TUTOR_H

#pragma once

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TutorStatus {
  TUTOR_STATUS_OK = 0,
  TUTOR_STATUS_NULL_POINTER = 1,
  TUTOR_STATUS_INVALID_UTF8 = 2,
  TUTOR_STATUS_CONFIG = 3,
  // The requested phase change is not an edge of the workflow.
  TUTOR_STATUS_PROTOCOL = 4,
  TUTOR_STATUS_SESSION_ENDED = 5,
  // The model backend failed; the learner input was kept and may be retried.
  TUTOR_STATUS_BACKEND = 6,
  TUTOR_STATUS_IO = 7,
  TUTOR_STATUS_INVALID_INPUT = 8,
  TUTOR_STATUS_NOT_FOUND = 9,
  // The output buffer is too small; the required length was written.
  TUTOR_STATUS_BUFFER_TOO_SMALL = 10,
  TUTOR_STATUS_PANIC = 11,
} TutorStatus;

typedef enum TutorPhase {
  TUTOR_PHASE_INTRODUCTION = 0,
  TUTOR_PHASE_ASSESSMENT = 1,
  TUTOR_PHASE_SCENARIO_SELECTION = 2,
  TUTOR_PHASE_ROLE_PLAY = 3,
  TUTOR_PHASE_FEEDBACK = 4,
  TUTOR_PHASE_ENDED = 5,
} TutorPhase;

typedef enum TutorCefrLevel {
  TUTOR_CEFR_LEVEL_A1 = 0,
  TUTOR_CEFR_LEVEL_A2 = 1,
  TUTOR_CEFR_LEVEL_B1 = 2,
  TUTOR_CEFR_LEVEL_B2 = 3,
  TUTOR_CEFR_LEVEL_C1 = 4,
  TUTOR_CEFR_LEVEL_C2 = 5,
} TutorCefrLevel;

// Opaque session handle.
typedef struct TutorSession TutorSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Create a session.
//
// `config_path` may be null to use `$ELLMA_CONFIG` or the defaults. With a
// non-null `script_path` replies come from that script instead of the model
// endpoint. A non-null `log_dir` overrides where the CSV transcript goes.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum TutorStatus tutor_session_new(const char *config_path,
                                   const char *script_path,
                                   const char *log_dir,
                                   struct TutorSession **out);

// Produce the opening tutor turn. `out_reply` (nullable) receives the text.
//
// # Safety
// `s` must come from [`tutor_session_new`]; `out_reply` must be null or writable.
enum TutorStatus tutor_session_start(struct TutorSession *s, char **out_reply);

// Send one learner line, which may be a slash command such as `/end`.
//
// `out_reply` receives the tutor's reply, or null when the step added none.
//
// # Safety
// `s` must come from [`tutor_session_new`]; `line` must be NUL-terminated;
// `out_reply` must be null or writable.
enum TutorStatus tutor_session_input(struct TutorSession *s, const char *line, char **out_reply);

// End the session if needed and store its summary in long-term memory.
//
// # Safety
// `s` must come from [`tutor_session_new`].
enum TutorStatus tutor_session_finish(struct TutorSession *s);

// # Safety
// `s` must come from [`tutor_session_new`]; `out` must be writable.
enum TutorStatus tutor_session_phase(struct TutorSession *s, enum TutorPhase *out);

// Number of turns in the transcript so far, all roles.
//
// # Safety
// `s` must come from [`tutor_session_new`]; `out` must be writable.
enum TutorStatus tutor_session_turn_count(struct TutorSession *s, size_t *out);

// Session id as a new string; free it with [`tutor_string_free`].
//
// # Safety
// `s` must come from [`tutor_session_new`].
char *tutor_session_id(struct TutorSession *s);

// Write the transcript as CSV to `path`, or to the session log file when null.
//
// # Safety
// `s` must come from [`tutor_session_new`]; `path` must be null or NUL-terminated.
enum TutorStatus tutor_session_write_csv(struct TutorSession *s, const char *path);

// # Safety
// `s` must be null or come from [`tutor_session_new`], and not be used afterwards.
void tutor_session_free(struct TutorSession *s);

// # Safety
// `p` must be null or a string returned by this library, freed once.
void tutor_string_free(char *p);

// Message for the last failed call on this thread, or null. Borrowed: valid
// until the next failing call on the same thread.
const char *tutor_last_error(void);

// Find a CEFR label such as "B1" in free text. `NotFound` when there is none.
//
// # Safety
// `text` must be NUL-terminated; `out` must be writable.
enum TutorStatus tutor_parse_cefr(const char *text, enum TutorCefrLevel *out);

// Encode an OSC message with one float argument into `buf`.
//
// `out_len` always receives the encoded length, also on `BufferTooSmall`.
//
// # Safety
// `address` must be NUL-terminated; `buf` must hold `cap` bytes or be null.
enum TutorStatus tutor_osc_encode_float(const char *address,
                                        float value,
                                        uint8_t *buf,
                                        size_t cap,
                                        size_t *out_len);

// Encode an OSC message with one string argument into `buf`.
//
// # Safety
// As for [`tutor_osc_encode_float`]; `text` must be NUL-terminated.
enum TutorStatus tutor_osc_encode_text(const char *address,
                                       const char *text,
                                       uint8_t *buf,
                                       size_t cap,
                                       size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TUTOR_H */
