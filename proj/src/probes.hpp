#pragma once

#include <utility>
#include <vector>

#include "backend.hpp"
#include "channel.hpp"
#include "classifier.hpp"
#include "harness.hpp"
#include "types.hpp"

namespace regleak {

struct ProbeRunOptions {
  uint64_t rounds = 1000;        // decode passes per bit offset, and control passes
  int bit_offset_limit = 32;     // offsets 0, 8, ... below this are swept
  bool sweep_operands = false;   // test every catalog operand, not just the first
  int calibrate_iterations = 2000;
  int timestamp_samples = 16;
  int value_retries = 3;
  double min_timestamp_correlation = 0.9;
  ClassifierParams classifier;
};

struct ScanOptions {
  ChannelConfig channel;  // symbol_count is managed per probe
  ProbeRunOptions run;
};

// Repeatedly arms a recovery window, executes the probe transiently and
// decodes the channel, sweeping byte offsets through the register.  The
// control run (decode with no encode) anchors the noise estimate.
LeakVerdict run_probe(Harness& harness, Channel& channel, const ProbeSpec& spec,
                      const ProbeRunOptions& options);

// Moving values never repeat, so value consistency cannot confirm them.
// Instead: leak 4 bytes per window, require wrap-aware monotonicity and
// correlation with the counting timer.
LeakVerdict verify_timestamp_leak(Harness& harness, const ProbeSpec& spec, uint64_t threshold,
                                  const ProbeRunOptions& options);

// Runs the probe once per stride, each over a freshly calibrated channel.
std::vector<std::pair<int, LeakVerdict>> sweep_strides(Harness& harness, const ProbeSpec& spec,
                                                       const std::vector<int>& strides,
                                                       const ProbeRunOptions& options);

// Full catalog pass producing one row per probe.  Probe-level errors become
// Skipped rows; the scan itself only fails on setup errors.
MachineReport full_scan(Harness& harness, const std::vector<ProbeSpec>& catalog,
                        const ScanOptions& options);

}  // namespace regleak
