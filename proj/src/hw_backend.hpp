#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "backend.hpp"
#include "types.hpp"

namespace regleak {

// Raw hardware backend.  Channel slots live in an mmapped buffer, timing
// comes from fenced rdtscp (or from the counting timer once timestamp reads
// trap), transient bodies are per-instruction asm blocks.
class HwBackend : public Backend {
 public:
  HwBackend();

  std::string name() const override { return "hw"; }
  BackendCapabilities capabilities() const override;
  MachineIdentity identity() override;
  std::unique_ptr<ChannelMemory> make_channel_memory(const ChannelConfig& config) override;
  std::unique_ptr<CountingTimer> make_counting_timer() override;
  uint64_t cycles_now() override;

  void transient_read(const ProbeSpec& spec, uint64_t operand, int bit_offset,
                      Channel& channel) override;
  void transient_counter_read(const CounterSelector& selector, Channel& channel) override;
  void transient_touch(uintptr_t address) override;

  bool restriction_active(Harness& harness, const ProbeSpec& spec) override;
  bool counter_restricted(Harness& harness, const CounterSelector& selector) override;

  // Makes timestamp reads fault for this process (PR_SET_TSC).  Process
  // local and irreversible only for the lifetime of this process; after the
  // switch all timing must come from the counting timer.
  void trap_timestamp_reads(CountingTimer& timer);
  bool timestamp_reads_trapped() const { return tsc_trapped_; }

  // Fenced latency of one load, in reference cycles (or counting timer ticks
  // once timestamp reads trap).
  uint64_t timed_load(const volatile uint8_t* address);

 private:
  bool tsc_trapped_ = false;
  CountingTimer* tick_source_ = nullptr;
  double tick_resolution_ = 1.0;
};

// True when this build and CPU can execute the hardware paths at all.
bool hardware_supported();

}  // namespace regleak
