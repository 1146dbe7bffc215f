#pragma once

#include <string>

#include "backend.hpp"

namespace regleak {

// JSON-in, JSON-out entry points behind the public API.  Each call builds
// its own harness for the duration of the run; options_json may be empty or
// "{}" for defaults.

std::string run_scan_json(Backend& backend, const std::string& options_json);
std::string run_counterleak_json(Backend& backend, const std::string& options_json);
std::string run_study_json(Backend& backend, const std::string& study,
                           const std::string& options_json);

}  // namespace regleak
