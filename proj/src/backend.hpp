#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "types.hpp"

namespace regleak {

class Channel;
class Harness;

// Raw slot operations on the lookup buffer.  The simulation advances a
// virtual clock per call; hardware issues clflush / loads / timed loads.
class ChannelMemory {
 public:
  virtual ~ChannelMemory() = default;
  virtual void flush_slot(int symbol, int slot) = 0;
  virtual void touch_slot(int symbol, int slot) = 0;
  virtual uint64_t time_slot(int symbol, int slot) = 0;
  // Called once at the start of every decode pass; the simulation injects
  // spurious hits here at the profile's per-pass rate.
  virtual void on_decode_pass(int symbol) = 0;
};

// Free-running tick source used when cycle counters themselves are the
// measurement target.  Hardware backs this with a counting worker thread;
// the simulation derives ticks from the virtual clock.
class CountingTimer {
 public:
  virtual ~CountingTimer() = default;
  virtual void start() = 0;
  virtual void stop() = 0;
  virtual uint64_t read() = 0;
  virtual double resolution() = 0;  // ticks per reference cycle, measured at start()
  virtual bool degraded() = 0;      // true when no sibling logical CPU hosts the worker
};

struct MachineIdentity {
  std::string cpu_model;
  std::string microcode;
  std::string microarchitecture;
};

// Everything the analysis pipeline needs from the machine under test.  Two
// implementations exist: the deterministic simulation and raw hardware.
// Pipeline code never branches on which one it has.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string name() const = 0;
  virtual BackendCapabilities capabilities() const = 0;
  virtual MachineIdentity identity() = 0;
  virtual std::unique_ptr<ChannelMemory> make_channel_memory(const ChannelConfig& config) = 0;
  virtual std::unique_ptr<CountingTimer> make_counting_timer() = 0;
  virtual uint64_t cycles_now() = 0;

  // Transient bodies.  Callable only inside Harness::run_transient: the
  // designated access faults on hardware, the simulation records a pending
  // fault instead.  Encoded bytes land in `channel` before the fault
  // architecturally retires.
  virtual void transient_read(const ProbeSpec& spec, uint64_t operand, int bit_offset,
                              Channel& channel) = 0;
  virtual void transient_counter_read(const CounterSelector& selector, Channel& channel) = 0;
  virtual void transient_touch(uintptr_t address) = 0;

  // Consumed by the harness after a simulated transient body completes.
  virtual int take_pending_fault() { return 0; }

  // True when the probe instruction faults architecturally at CPL3, i.e. the
  // environment really denies the read that the probe targets.
  virtual bool restriction_active(Harness& harness, const ProbeSpec& spec) = 0;
  virtual bool counter_restricted(Harness& harness, const CounterSelector& selector) = 0;

  // Victim instrumentation.  Hardware ignores these (the real instruction
  // stream drives the counters); the simulation applies its counter models.
  virtual void victim_event(const std::string& event, uint64_t n) {
    (void)event;
    (void)n;
  }
  virtual void victim_speculative_event(const std::string& event, uint64_t n) {
    (void)event;
    (void)n;
  }
  virtual void notify_mistrain(int rounds) { (void)rounds; }
  virtual bool speculation_armed() { return false; }
  virtual void consume_speculation() {}

  // Restore the initial state so a pipeline run replays exactly.  No-op on
  // hardware.
  virtual void rewind() {}

  // Report metadata; meaningful in simulation only.
  virtual std::string profile_name() const { return ""; }
  virtual uint64_t run_seed() const { return 0; }
};

}  // namespace regleak
