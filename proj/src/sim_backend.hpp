#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "backend.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace regleak {

enum class ProbeBehaviorKind {
  Silent,               // transient window forwards nothing
  LeakValue,            // forwards a fixed register value
  ZeroForward,          // executes but forwards zeros
  Timestamp,            // forwards the advancing virtual clock
  UnverifiedTimestamp,  // forwards changing values uncorrelated with time
};

struct ProbeBehavior {
  ProbeBehaviorKind kind = ProbeBehaviorKind::Silent;
  uint64_t value = 0;  // LeakValue payload
};

struct CounterEventRule {
  int64_t increment = 0;
  double noise_sigma = 0.0;
};

// One modeled performance counter.  `self_increment` is the counter's own
// advance caused by one leak primitive execution; `auto_increment` is
// background advance per read regardless of victim activity.
struct CounterModel {
  uint32_t counter_index = 0;
  uint64_t initial = 0;
  int64_t self_increment = 0;
  int64_t auto_increment = 0;
  std::map<std::string, CounterEventRule> events;  // victim event -> rule
};

struct SimTiming {
  uint64_t hit_cycles = 50;
  uint64_t miss_cycles = 400;
  uint64_t flush_cycles = 30;
  uint64_t encode_window_cycles = 6655;
};

// Machine description driving the simulation: which probes leak what, how
// noisy decode is, and how modeled counters respond to victim events.
struct LeakageProfile {
  std::string name;
  std::string cpu_model;
  std::string microcode;
  std::string microarchitecture;
  double spurious_hit_rate = 0.0;  // per decode pass: one extra hit in a random slot
  uint64_t seed = 1;
  SimTiming timing;
  std::map<std::string, ProbeBehavior> probes;     // by probe name; absent means Silent
  std::map<std::string, CounterModel> counters;    // by event name

  ProbeBehavior behavior_for(const std::string& probe) const;
};

LeakageProfile profile_from_json_text(const std::string& text);
LeakageProfile load_profile(const std::string& path);
std::string profile_to_json_text(const LeakageProfile& profile);

const char* behavior_kind_name(ProbeBehaviorKind kind);

// Deterministic machine model.  All timing flows through one virtual cycle
// clock; all randomness flows through one seeded generator.  Identical
// (profile, seed) pairs replay identical runs.
class SimBackend : public Backend {
 public:
  explicit SimBackend(LeakageProfile profile, std::optional<uint64_t> seed = std::nullopt);

  std::string name() const override { return "sim"; }
  BackendCapabilities capabilities() const override;
  MachineIdentity identity() override;
  std::unique_ptr<ChannelMemory> make_channel_memory(const ChannelConfig& config) override;
  std::unique_ptr<CountingTimer> make_counting_timer() override;
  uint64_t cycles_now() override { return clock_; }

  void transient_read(const ProbeSpec& spec, uint64_t operand, int bit_offset,
                      Channel& channel) override;
  void transient_counter_read(const CounterSelector& selector, Channel& channel) override;
  void transient_touch(uintptr_t address) override;
  int take_pending_fault() override;

  bool restriction_active(Harness&, const ProbeSpec&) override { return true; }
  bool counter_restricted(Harness&, const CounterSelector&) override { return true; }

  void victim_event(const std::string& event, uint64_t n) override;
  void victim_speculative_event(const std::string& event, uint64_t n) override;
  void notify_mistrain(int rounds) override;
  bool speculation_armed() override { return speculation_armed_; }
  void consume_speculation() override { speculation_armed_ = false; }

  void rewind() override;
  std::string profile_name() const override { return profile_.name; }
  uint64_t run_seed() const override { return seed_; }

  const LeakageProfile& profile() const { return profile_; }

  // Page-walk model for address probing: touching the hot page completes few
  // walks, any other page completes many.  Events "tlb_walk_hit" and
  // "tlb_walk_miss" feed the counter rules.
  void set_hot_page(uintptr_t address) { hot_page_ = address >> 12; }

  // Scales every counter event's noise_sigma; lets one profile sweep noise
  // levels without editing the document.
  void scale_counter_noise(double factor);

  // Ground truth for tests.
  uint64_t counter_value(const std::string& event_name) const;
  uint64_t clock() const { return clock_; }

 private:
  friend class SimChannelMemory;

  void advance(uint64_t cycles) { clock_ += cycles; }
  void require_armed() const;
  void apply_event(const std::string& event, uint64_t n);
  void encode_value(uint64_t value, int bit_offset, Channel& channel);

  LeakageProfile profile_;
  uint64_t seed_;
  Rng rng_;
  uint64_t clock_ = 0;
  int pending_fault_ = 0;
  bool speculation_armed_ = false;
  uint64_t scramble_state_ = 0;
  std::optional<uint64_t> hot_page_;
  std::map<std::string, uint64_t> counter_values_;  // by event name
};

}  // namespace regleak
