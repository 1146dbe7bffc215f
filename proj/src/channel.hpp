#pragma once

#include <cstdint>
#include <memory>
#include <optional>

#include "backend.hpp"
#include "types.hpp"

namespace regleak {

// Page-granular Flush+Reload covert channel over a lookup buffer.
//
// Decode order steps by a constant coprime to slot_count so the sequential
// prefetcher never sees adjacent accesses.  Each decode pass leaves the
// region flushed.
class Channel {
 public:
  Channel(ChannelConfig config, std::unique_ptr<ChannelMemory> memory);

  const ChannelConfig& config() const { return config_; }
  ChannelMemory& memory() { return *memory_; }

  // Alternates hot and cold timed loads, takes the median of each population
  // and places the threshold at the midpoint.  Fails when the medians do not
  // separate.
  uint64_t calibrate(int iterations);
  void set_threshold(uint64_t cycles);

  void encode(unsigned value, int symbol = 0);
  ChannelObservation decode(int symbol = 0);
  void flush_all();

  // Decode passes until one yields exactly one hit slot.  Passes with zero
  // or multiple hits are discarded; if retries are exhausted the majority
  // value among clean passes wins.
  std::optional<unsigned> read_value(int symbol, int retries);

  uint64_t probe_count() const { return probe_count_; }
  void reset_probe_count() { probe_count_ = 0; }

 private:
  ChannelConfig config_;
  std::unique_ptr<ChannelMemory> memory_;
  uint64_t probe_count_ = 0;
  int probe_step_ = 1;
};

Channel make_channel(Backend& backend, ChannelConfig config);

}  // namespace regleak
