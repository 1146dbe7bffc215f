#include "regleak.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "env.hpp"
#include "errors.hpp"
#include "hw_backend.hpp"
#include "report.hpp"
#include "sim_backend.hpp"
#include "study_runner.hpp"

struct rl_session {
  std::unique_ptr<regleak::Backend> backend;
  std::string last_error;
};

namespace {

constexpr const char* kVersion = "1.0.0";

rl_status status_from(regleak::ErrorCode code) {
  int value = static_cast<int>(code) + 1;
  if (value < RL_INVALID_ARGUMENT || value > RL_INTERNAL) return RL_INTERNAL;
  return static_cast<rl_status>(value);
}

char* copy_string(const std::string& text) {
  char* out = static_cast<char*>(std::malloc(text.size() + 1));
  if (out) std::memcpy(out, text.c_str(), text.size() + 1);
  return out;
}

template <typename Fn>
rl_status guarded(rl_session* session, Fn&& fn) {
  if (!session) return RL_INVALID_ARGUMENT;
  session->last_error.clear();
  try {
    return fn();
  } catch (const regleak::Error& e) {
    session->last_error = e.what();
    return status_from(e.code());
  } catch (const std::bad_alloc&) {
    session->last_error = "out of memory";
    return RL_INTERNAL;
  } catch (const std::exception& e) {
    session->last_error = e.what();
    return RL_INTERNAL;
  }
}

rl_status emit(rl_session* session, const std::string& text, char** out) {
  *out = copy_string(text);
  if (!*out) {
    session->last_error = "out of memory";
    return RL_INTERNAL;
  }
  return RL_OK;
}

std::string options_or_empty(const char* options_json) {
  return options_json ? std::string(options_json) : std::string();
}

}  // namespace

extern "C" {

const char* rl_version(void) { return kVersion; }

const char* rl_status_name(rl_status status) {
  switch (status) {
    case RL_OK: return "ok";
    case RL_INVALID_ARGUMENT: return "invalid_argument";
    case RL_CALIBRATION_FAILED: return "calibration_failed";
    case RL_PROFILE_INVALID: return "profile_invalid";
    case RL_ENVIRONMENT_NOT_RESTRICTED: return "environment_not_restricted";
    case RL_HARNESS_FAILURE: return "harness_failure";
    case RL_UNRECOVERABLE_FAULT: return "unrecoverable_fault";
    case RL_TIMER_UNAVAILABLE: return "timer_unavailable";
    case RL_NO_LEAKAGE: return "no_leakage";
    case RL_NO_SIGNAL: return "no_signal";
    case RL_NO_ANOMALY: return "no_anomaly";
    case RL_DEGENERATE_DISTRIBUTION: return "degenerate_distribution";
    case RL_AMBIGUOUS_BASELINES: return "ambiguous_baselines";
    case RL_UNSUPPORTED: return "unsupported";
    case RL_IO: return "io";
    case RL_INTERNAL: return "internal";
  }
  return "internal";
}

rl_status rl_session_open_sim(const char* profile_json, uint64_t seed,
                              rl_session** out_session) {
  if (!profile_json || !out_session) return RL_INVALID_ARGUMENT;
  *out_session = nullptr;
  auto session = std::make_unique<rl_session>();
  rl_status status = guarded(session.get(), [&] {
    regleak::LeakageProfile profile = regleak::profile_from_json_text(profile_json);
    std::optional<uint64_t> seed_override;
    if (seed != 0) seed_override = seed;
    session->backend = std::make_unique<regleak::SimBackend>(profile, seed_override);
    return RL_OK;
  });
  if (status == RL_OK) *out_session = session.release();
  return status;
}

rl_status rl_session_open_hw(rl_session** out_session) {
  if (!out_session) return RL_INVALID_ARGUMENT;
  *out_session = nullptr;
  auto session = std::make_unique<rl_session>();
  rl_status status = guarded(session.get(), [&] {
    session->backend = std::make_unique<regleak::HwBackend>();
    return RL_OK;
  });
  if (status == RL_OK) *out_session = session.release();
  return status;
}

void rl_session_close(rl_session* session) { delete session; }

const char* rl_session_last_error(const rl_session* session) {
  if (!session) return "";
  return session->last_error.c_str();
}

rl_status rl_scan(rl_session* session, const char* options_json, char** out_report_json) {
  if (!session || !out_report_json) return RL_INVALID_ARGUMENT;
  return guarded(session, [&] {
    std::string report = regleak::run_scan_json(*session->backend,
                                                options_or_empty(options_json));
    return emit(session, report, out_report_json);
  });
}

rl_status rl_report_markdown(rl_session* session, const char* report_json,
                             char** out_markdown) {
  if (!session || !report_json || !out_markdown) return RL_INVALID_ARGUMENT;
  return guarded(session, [&] {
    regleak::MachineReport report = regleak::report_from_json(report_json);
    return emit(session, regleak::report_to_markdown(report), out_markdown);
  });
}

rl_status rl_counterleak_trace(rl_session* session, const char* options_json,
                               char** out_trace_json) {
  if (!session || !out_trace_json) return RL_INVALID_ARGUMENT;
  return guarded(session, [&] {
    std::string trace = regleak::run_counterleak_json(*session->backend,
                                                      options_or_empty(options_json));
    return emit(session, trace, out_trace_json);
  });
}

rl_status rl_study_run(rl_session* session, const char* study, const char* options_json,
                       char** out_result_json) {
  if (!session || !study || !out_result_json) return RL_INVALID_ARGUMENT;
  return guarded(session, [&] {
    std::string result = regleak::run_study_json(*session->backend, study,
                                                 options_or_empty(options_json));
    return emit(session, result, out_result_json);
  });
}

rl_status rl_env_check(const char* root, char** out_report_json) {
  if (!out_report_json) return RL_INVALID_ARGUMENT;
  try {
    regleak::EnvReport report = regleak::run_env_checks(root ? root : "/");
    *out_report_json = copy_string(regleak::env_to_json(report));
    return *out_report_json ? RL_OK : RL_INTERNAL;
  } catch (const regleak::Error& e) {
    return status_from(e.code());
  } catch (const std::exception&) {
    return RL_INTERNAL;
  }
}

void rl_string_free(char* text) { std::free(text); }

}  // extern "C"
