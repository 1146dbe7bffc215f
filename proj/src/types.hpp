#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace regleak {

// Geometry of the cache lookup buffer: symbol_count regions, each holding
// slot_count slots of stride_bytes.  One region encodes one byte (or bit).
struct ChannelConfig {
  int slot_count = 256;
  int stride_bytes = 4096;
  int symbol_count = 1;
  uint64_t threshold_cycles = 0;  // 0 until calibrated

  std::size_t region_bytes() const {
    return static_cast<std::size_t>(slot_count) * static_cast<std::size_t>(stride_bytes);
  }
  std::size_t buffer_bytes() const { return region_bytes() * static_cast<std::size_t>(symbol_count); }
  bool calibrated() const { return threshold_cycles > 0; }
};

struct SlotTiming {
  int slot = 0;
  uint64_t cycles = 0;
};

// One decode pass over a single symbol region.  hit_slots is ascending and
// contains exactly the slots whose measured cycles fell below the threshold.
struct ChannelObservation {
  int symbol_index = 0;
  std::vector<SlotTiming> per_slot_cycles;
  std::vector<int> hit_slots;
};

enum class LeakStatus {
  Leaks,        // value forwarded transiently and confirmed
  ZeroForward,  // transient read executes but forwards only zeros
  Unverified,   // cache hits observed, value consistency not established
  NoLeak,       // nothing observed above the detection threshold
};

struct ValueEvidence {
  uint64_t value = 0;
  uint64_t hits = 0;
};

struct LeakVerdict {
  LeakStatus status = LeakStatus::NoLeak;
  std::vector<ValueEvidence> evidence;  // confirmed values with supporting hit counts
  uint64_t rounds = 0;
};

// How recovery from the intentional fault is arranged.
enum class FaultStrategy {
  SignalHandler,            // sigsetjmp + SIGSEGV/SIGILL/SIGBUS handler
  TransactionAbort,         // wrap the access in a hardware transaction
  SpeculativeSuppression,   // reach the access only down a mispredicted branch
};

struct ProbeSpec {
  std::string name;                 // instruction identifier, e.g. "rdpmc"
  std::string description;          // what the instruction exposes
  std::vector<uint64_t> operands;   // operand sweep values; empty means none
  int leak_window_bits = 8;         // bits recoverable per transient window
  std::string restriction;          // configuration that must deny the read
  bool timestamp = false;           // moving value, needs the timestamp verifier
};

enum class RowStatus { Leaks, ZeroForward, Unverified, NoLeak, Skipped };

struct ProbeResult {
  std::string probe;
  RowStatus status = RowStatus::Skipped;
  std::vector<ValueEvidence> evidence;
  uint64_t rounds = 0;
  std::string skip_reason;  // set only for Skipped rows
};

struct MachineReport {
  int schema_version = 1;
  std::string backend;      // "sim" or "hw"
  std::string cpu_model;
  std::string microcode;
  std::string microarchitecture;
  std::string profile;      // simulation profile name, empty on hardware
  uint64_t seed = 0;
  int stride_bytes = 4096;
  uint64_t rounds = 0;
  std::string timestamp;
  std::vector<ProbeResult> rows;
};

enum class CounterProgramming { PreExisting, SetupHelper };

struct CounterSelector {
  uint32_t counter_index = 0;
  std::string event_name;
  CounterProgramming programmed_by = CounterProgramming::PreExisting;
};

struct CounterSample {
  uint64_t value = 0;        // reconstructed counter value (low `bytes` bytes)
  int bytes = 1;
  uint64_t sample_cycles = 0;  // full sample including decode
  uint64_t encode_cycles = 0;  // transient encode window only
  uint64_t probe_count = 0;    // timed reloads spent on this sample
};

struct TraceSample {
  uint64_t sequence = 0;
  int64_t delta = 0;
};

struct TraceSeries {
  CounterSelector selector;
  std::string victim;
  uint64_t repetition = 0;
  std::vector<TraceSample> samples;
};

struct BackendCapabilities {
  bool has_cycle_counter = false;
  bool has_transactional_memory = false;
  bool has_sibling_threads = false;
  bool is_simulation = false;
};

struct TransientOutcome {
  bool completed = false;
  int fault_signal = 0;  // 0 when the window retired without faulting
};

}  // namespace regleak
