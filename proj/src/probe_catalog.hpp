#pragma once

#include <string>
#include <vector>

#include "types.hpp"

namespace regleak {

// The unprivileged-but-restrictable instructions under test.  Each probe
// names one instruction, the operands worth sweeping, and the configuration
// that must be denying the read for a transient test to mean anything.
const std::vector<ProbeSpec>& default_catalog();

const ProbeSpec* find_probe(const std::string& name);

// Catalog rows for the given names, in catalog order.  Unknown names are
// rejected.
std::vector<ProbeSpec> catalog_subset(const std::vector<std::string>& names);

}  // namespace regleak
