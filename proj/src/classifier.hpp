#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "types.hpp"

namespace regleak {

// Clean single-hit decode passes aggregated over one bit offset.
struct OffsetObservation {
  int bit_offset = 0;
  std::map<unsigned, uint64_t> value_hits;
  uint64_t rounds = 0;
  uint64_t discarded = 0;  // multi-hit passes, excluded from value_hits
};

// Decode-only passes with no transient encode, taken on the same channel.
// Everything observed here is noise.
struct ControlStats {
  uint64_t total_hits = 0;
  uint64_t slot0_hits = 0;
  uint64_t rounds = 0;
  int slot_count = 256;
};

struct ClassifierParams {
  uint64_t min_confirm_hits = 5;  // floor on the detection threshold
  double tail_epsilon = 1e-9;     // Poisson tail mass allowed past the threshold
  double zero_margin = 10.0;      // zero must beat the control slot-0 rate by this factor
  double unverified_margin = 2.0;  // activity must beat the control estimate by this factor
};

// Smallest t with P[Poisson(lambda) >= t] < epsilon, floored at
// min_confirm_hits.  lambda is the expected noise hit count for one slot
// over the measurement rounds.
uint64_t detection_threshold(double lambda, const ClassifierParams& params);

// The single value whose hit count clears the detection threshold, if
// exactly one does.  Zero additionally has to beat the control slot-0 rate
// by zero_margin, since a decode artifact parks there on some parts.
std::optional<unsigned> confirmed_value(const OffsetObservation& obs, const ControlStats& control,
                                        const ClassifierParams& params);

// Folds per-offset confirmations into one verdict:
//   any nonzero byte confirmed        -> Leaks, value reassembled across offsets
//   only zeros confirmed              -> ZeroForward
//   hits well above control, no value -> Unverified
//   otherwise                         -> NoLeak
LeakVerdict classify(const std::vector<OffsetObservation>& offsets, const ControlStats& control,
                     const ClassifierParams& params);

}  // namespace regleak
