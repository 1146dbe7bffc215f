#include "probe_catalog.hpp"

#include <algorithm>

#include "errors.hpp"

namespace regleak {

const std::vector<ProbeSpec>& default_catalog() {
  static const std::vector<ProbeSpec> catalog = {
      {"rdpmc",
       "performance-monitoring counter",
       {0, 1, 2, 3},
       8,
       "user counter reads disabled (CR4.PCE=0, /sys/devices/cpu/rdpmc is 0)",
       false},
      {"rdtsc",
       "timestamp counter",
       {},
       8,
       "timestamp reads trap for this process (prctl PR_SET_TSC, PR_TSC_SIGSEGV)",
       true},
      {"rdtscp",
       "timestamp counter with IA32_TSC_AUX",
       {},
       8,
       "timestamp reads trap for this process (prctl PR_SET_TSC, PR_TSC_SIGSEGV)",
       true},
      {"mov_cr",
       "control register",
       {0, 2, 3, 4, 8},
       8,
       "always privileged at CPL3",
       false},
      {"mov_dr",
       "debug register",
       {0, 1, 2, 3, 6, 7},
       8,
       "always privileged at CPL3",
       false},
      {"rdfsbase",
       "FS segment base",
       {},
       8,
       "FSGSBASE user access disabled (nofsgsbase, CR4.FSGSBASE=0)",
       false},
      {"rdgsbase",
       "GS segment base",
       {},
       8,
       "FSGSBASE user access disabled (nofsgsbase, CR4.FSGSBASE=0)",
       false},
      {"rdmsr",
       "model-specific register",
       {0x10, 0x1B, 0xC0000080},
       8,
       "always privileged at CPL3",
       false},
      {"str", "task register selector", {}, 8, "UMIP enabled (CR4.UMIP=1)", false},
      {"sldt", "LDT selector", {}, 8, "UMIP enabled (CR4.UMIP=1)", false},
      {"sidt", "IDT base", {}, 8, "UMIP enabled (CR4.UMIP=1)", false},
      {"sgdt", "GDT base", {}, 8, "UMIP enabled (CR4.UMIP=1)", false},
      {"smsw", "machine status word", {}, 8, "UMIP enabled (CR4.UMIP=1)", false},
  };
  return catalog;
}

const ProbeSpec* find_probe(const std::string& name) {
  for (const ProbeSpec& spec : default_catalog())
    if (spec.name == name) return &spec;
  return nullptr;
}

std::vector<ProbeSpec> catalog_subset(const std::vector<std::string>& names) {
  for (const std::string& name : names)
    if (!find_probe(name)) raise(ErrorCode::InvalidArgument, "unknown probe: " + name);

  std::vector<ProbeSpec> subset;
  for (const ProbeSpec& spec : default_catalog()) {
    if (std::find(names.begin(), names.end(), spec.name) != names.end()) subset.push_back(spec);
  }
  return subset;
}

}  // namespace regleak
