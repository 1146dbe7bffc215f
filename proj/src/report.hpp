#pragma once

#include <string>

#include "types.hpp"

namespace regleak {

const char* row_status_name(RowStatus status);
RowStatus row_status_from_name(const std::string& name);

// parse(render(r)) reproduces r exactly; both directions are covered by the
// schema_version field for future migrations.
std::string report_to_json(const MachineReport& report);
MachineReport report_from_json(const std::string& text);

std::string report_to_markdown(const MachineReport& report);

bool operator==(const ValueEvidence& a, const ValueEvidence& b);
bool operator==(const ProbeResult& a, const ProbeResult& b);
bool operator==(const MachineReport& a, const MachineReport& b);

}  // namespace regleak
