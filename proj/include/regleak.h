/* C API for the register-leakage toolkit.
 *
 * All entry points return rl_status; RL_OK is zero. Strings returned through
 * out-parameters are heap-allocated and must be released with rl_string_free.
 * Sessions are not thread-safe; create one per thread.
 */
#ifndef REGLEAK_H
#define REGLEAK_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RL_API __declspec(dllexport)
#else
#define RL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rl_status {
  RL_OK = 0,
  RL_INVALID_ARGUMENT = 1,
  RL_CALIBRATION_FAILED = 2,
  RL_PROFILE_INVALID = 3,
  RL_ENVIRONMENT_NOT_RESTRICTED = 4,
  RL_HARNESS_FAILURE = 5,
  RL_UNRECOVERABLE_FAULT = 6,
  RL_TIMER_UNAVAILABLE = 7,
  RL_NO_LEAKAGE = 8,
  RL_NO_SIGNAL = 9,
  RL_NO_ANOMALY = 10,
  RL_DEGENERATE_DISTRIBUTION = 11,
  RL_AMBIGUOUS_BASELINES = 12,
  RL_UNSUPPORTED = 13,
  RL_IO = 14,
  RL_INTERNAL = 15
} rl_status;

typedef struct rl_session rl_session;

/* Library version as "major.minor.patch". Static storage; do not free. */
RL_API const char* rl_version(void);

/* Stable identifier for a status code ("ok", "invalid_argument", ...).
 * Static storage; do not free. Unknown codes map to "internal". */
RL_API const char* rl_status_name(rl_status status);

/* Opens a deterministic simulation session from a JSON leakage profile.
 * seed overrides the profile seed when nonzero. */
RL_API rl_status rl_session_open_sim(const char* profile_json, uint64_t seed,
                                     rl_session** out_session);

/* Opens a session against the host CPU. Fails with RL_UNSUPPORTED away
 * from x86-64 Linux. */
RL_API rl_status rl_session_open_hw(rl_session** out_session);

RL_API void rl_session_close(rl_session* session);

/* Message from the most recent failing call on this session.
 * Static until the next call on the same session; do not free. */
RL_API const char* rl_session_last_error(const rl_session* session);

/* Runs the probe catalog scan. options_json may be NULL or "{}".
 * On success *out_report_json holds the machine report. */
RL_API rl_status rl_scan(rl_session* session, const char* options_json,
                         char** out_report_json);

/* Renders a machine report (as produced by rl_scan) as a markdown table. */
RL_API rl_status rl_report_markdown(rl_session* session, const char* report_json,
                                    char** out_markdown);

/* Captures a trace of transient counter reads. options_json must name the
 * counter event; see the README for the full option set. */
RL_API rl_status rl_counterleak_trace(rl_session* session, const char* options_json,
                                      char** out_trace_json);

/* Runs one of the case studies: "spectre", "kaslr", "rsa", "zigzagger". */
RL_API rl_status rl_study_run(rl_session* session, const char* study,
                              const char* options_json, char** out_result_json);

/* Inspects the host environment for the restrictions the probes depend on.
 * root is a path prefix for the inspected pseudo-filesystems; NULL means "/".
 * Does not need a session. */
RL_API rl_status rl_env_check(const char* root, char** out_report_json);

RL_API void rl_string_free(char* text);

#ifdef __cplusplus
}
#endif

#endif /* REGLEAK_H */
