#include "env.hpp"

#include <fstream>
#include <optional>
#include <sstream>

#include <sched.h>

#include "json.hpp"

namespace regleak {

using nlohmann::json;

namespace {

std::optional<std::string> read_first_line(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string line;
  std::getline(in, line);
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r' || line.back() == ' '))
    line.pop_back();
  return line;
}

std::optional<std::string> read_all(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string join(const std::string& root, const std::string& path) {
  if (root.empty() || root == "/") return path;
  return root + path;
}

}  // namespace

EnvReport run_env_checks(const std::string& root) {
  EnvReport report;

  {
    EnvCheck check;
    check.name = "rdpmc_user_access";
    check.expected = "0";
    check.mandatory = true;
    check.hint = "write 0 to /sys/devices/cpu/rdpmc to restrict user counter reads";
    auto value = read_first_line(join(root, "/sys/devices/cpu/rdpmc"));
    if (!value) value = read_first_line(join(root, "/sys/bus/event_source/devices/cpu/rdpmc"));
    check.observed = value.value_or("unknown");
    check.pass = value && *value == "0";
    report.checks.push_back(check);
  }

  {
    EnvCheck check;
    check.name = "fsgsbase_disabled";
    check.expected = "nofsgsbase in kernel cmdline";
    check.mandatory = false;
    check.hint = "boot with nofsgsbase to restrict rdfsbase/rdgsbase";
    auto cmdline = read_first_line(join(root, "/proc/cmdline"));
    if (cmdline) {
      bool off = cmdline->find("nofsgsbase") != std::string::npos;
      check.observed = off ? "nofsgsbase present" : "fsgsbase enabled";
      check.pass = off;
    } else {
      check.observed = "unknown";
      check.pass = false;
    }
    report.checks.push_back(check);
  }

  {
    EnvCheck check;
    check.name = "umip_available";
    check.expected = "umip cpu flag";
    check.mandatory = false;
    check.hint = "str/sldt/sidt/sgdt/smsw only fault under UMIP";
    auto cpuinfo = read_all(join(root, "/proc/cpuinfo"));
    if (cpuinfo) {
      bool umip = cpuinfo->find(" umip") != std::string::npos;
      check.observed = umip ? "umip" : "absent";
      check.pass = umip;
    } else {
      check.observed = "unknown";
      check.pass = false;
    }
    report.checks.push_back(check);
  }

  {
    EnvCheck check;
    check.name = "isolated_cpus";
    check.expected = "non-empty isolcpus set";
    check.mandatory = false;
    check.hint = "isolcpus= reduces scheduler noise during timing";
    auto isolated = read_first_line(join(root, "/sys/devices/system/cpu/isolated"));
    if (isolated && !isolated->empty()) {
      check.observed = *isolated;
      check.pass = true;
    } else {
      check.observed = isolated ? "empty" : "unknown";
      check.pass = false;
    }
    report.checks.push_back(check);
  }

  {
    EnvCheck check;
    check.name = "smt_sibling";
    check.expected = "sibling logical cpu for the counting timer";
    check.mandatory = false;
    check.hint = "the counting timer degrades without a hyperthread sibling";
    auto siblings =
        read_first_line(join(root, "/sys/devices/system/cpu/cpu0/topology/thread_siblings_list"));
    if (siblings) {
      bool multiple =
          siblings->find(',') != std::string::npos || siblings->find('-') != std::string::npos;
      check.observed = *siblings;
      check.pass = multiple;
    } else {
      check.observed = "unknown";
      check.pass = false;
    }
    report.checks.push_back(check);
  }

  {
    EnvCheck check;
    check.name = "cpu_pinned";
    check.expected = "affinity limited to one cpu";
    check.mandatory = false;
    check.hint = "run under taskset -c <cpu> for stable timings";
    cpu_set_t set;
    CPU_ZERO(&set);
    if (sched_getaffinity(0, sizeof(set), &set) == 0) {
      int count = CPU_COUNT(&set);
      check.observed = std::to_string(count) + " cpus";
      check.pass = count == 1;
    } else {
      check.observed = "unknown";
      check.pass = false;
    }
    report.checks.push_back(check);
  }

  {
    EnvCheck check;
    check.name = "microcode_readable";
    check.expected = "microcode revision visible";
    check.mandatory = false;
    check.hint = "reports record the revision for cross-machine comparison";
    auto cpuinfo = read_all(join(root, "/proc/cpuinfo"));
    std::string revision;
    if (cpuinfo) {
      std::istringstream lines(*cpuinfo);
      std::string line;
      while (std::getline(lines, line)) {
        if (line.rfind("microcode", 0) == 0) {
          size_t colon = line.find(':');
          if (colon != std::string::npos) {
            size_t begin = line.find_first_not_of(" \t", colon + 1);
            if (begin != std::string::npos) revision = line.substr(begin);
          }
          break;
        }
      }
    }
    check.observed = revision.empty() ? "unknown" : revision;
    check.pass = !revision.empty();
    report.checks.push_back(check);
  }

  report.mandatory_pass = true;
  for (const EnvCheck& check : report.checks)
    if (check.mandatory && !check.pass) report.mandatory_pass = false;
  return report;
}

std::string env_to_json(const EnvReport& report) {
  json checks = json::array();
  for (const EnvCheck& check : report.checks)
    checks.push_back({{"name", check.name},
                      {"expected", check.expected},
                      {"observed", check.observed},
                      {"hint", check.hint},
                      {"pass", check.pass},
                      {"mandatory", check.mandatory}});
  json root = {{"checks", checks}, {"mandatory_pass", report.mandatory_pass}};
  return root.dump(2);
}

}  // namespace regleak
