#pragma once

#include <stdexcept>
#include <string>

namespace regleak {

enum class ErrorCode {
  InvalidArgument,
  CalibrationFailed,
  ProfileInvalid,
  EnvironmentNotRestricted,
  HarnessFailure,
  UnrecoverableFault,
  TimerUnavailable,
  NoLeakage,
  NoSignal,
  NoAnomaly,
  DegenerateDistribution,
  AmbiguousBaselines,
  Unsupported,
  Io,
  Internal,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::CalibrationFailed: return "CalibrationFailed";
    case ErrorCode::ProfileInvalid: return "ProfileInvalid";
    case ErrorCode::EnvironmentNotRestricted: return "EnvironmentNotRestricted";
    case ErrorCode::HarnessFailure: return "HarnessFailure";
    case ErrorCode::UnrecoverableFault: return "UnrecoverableFault";
    case ErrorCode::TimerUnavailable: return "TimerUnavailable";
    case ErrorCode::NoLeakage: return "NoLeakage";
    case ErrorCode::NoSignal: return "NoSignal";
    case ErrorCode::NoAnomaly: return "NoAnomaly";
    case ErrorCode::DegenerateDistribution: return "DegenerateDistribution";
    case ErrorCode::AmbiguousBaselines: return "AmbiguousBaselines";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Internal: return "Internal";
  }
  return "Internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        message_(message) {}

  ErrorCode code() const { return code_; }
  const std::string& message() const { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace regleak
