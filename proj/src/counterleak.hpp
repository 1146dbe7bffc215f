#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "channel.hpp"
#include "harness.hpp"
#include "types.hpp"

namespace regleak {

struct CounterLeakOptions {
  int bytes = 1;         // counter bytes recovered per transient window (1..4)
  int retries = 3;       // full re-encode attempts when decode is ambiguous
  int baseline_samples = 5;
};

// Reads a user-read-restricted performance counter by forwarding its value
// through the transient window into the cache channel, one lookup region per
// byte.
class CounterLeak {
 public:
  CounterLeak(Harness& harness, CounterSelector selector, ChannelConfig channel_config,
              CounterLeakOptions options = {});

  // One counter sample: the low `bytes` bytes of the counter.
  CounterSample leak_counter();

  // Counter movement across `action`, modulo 256^bytes, with the
  // primitive's own footprint (measured once, cached) subtracted.
  int64_t leak_delta(const std::function<void()>& action);

  // The raw movement between two back-to-back samples.  Cached after the
  // first call; the session subtracts it from every delta.
  uint64_t self_baseline();

  // Median cycle cost of the transient encode alone.
  uint64_t measure_encode_window(int samples);

  Channel& channel() { return channel_; }
  const CounterSelector& selector() const { return selector_; }
  uint64_t wrap_modulus() const { return modulus_; }

 private:
  uint64_t raw_sample_pair_delta();

  Harness& harness_;
  CounterSelector selector_;
  CounterLeakOptions options_;
  Channel channel_;
  uint64_t modulus_;
  std::optional<uint64_t> baseline_;
};

// Runs `steps` in order, recording the corrected counter delta across each.
TraceSeries capture_trace(CounterLeak& leak, const std::string& victim_name, uint64_t repetition,
                          const std::vector<std::function<void()>>& steps);

std::string trace_to_json(const TraceSeries& series);
TraceSeries trace_from_json(const std::string& text);
std::string trace_to_csv(const TraceSeries& series);
std::vector<TraceSample> trace_samples_from_csv(const std::string& text);

}  // namespace regleak
