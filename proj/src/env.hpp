#pragma once

#include <string>
#include <vector>

namespace regleak {

struct EnvCheck {
  std::string name;
  std::string expected;
  std::string observed;
  std::string hint;
  bool pass = false;
  bool mandatory = false;
};

struct EnvReport {
  std::vector<EnvCheck> checks;
  bool mandatory_pass = false;
};

// Read-only inspection of the knobs hardware runs depend on.  `root` is
// prepended to every /proc and /sys path so fixtures can stand in for the
// live filesystem.
EnvReport run_env_checks(const std::string& root = "/");

std::string env_to_json(const EnvReport& report);

}  // namespace regleak
