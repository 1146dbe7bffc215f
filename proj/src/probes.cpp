#include "probes.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>

#include "errors.hpp"

namespace regleak {

namespace {

ControlStats run_control(Channel& channel, uint64_t rounds) {
  ControlStats control;
  control.rounds = rounds;
  control.slot_count = channel.config().slot_count;
  channel.flush_all();
  for (uint64_t i = 0; i < rounds; ++i) {
    ChannelObservation obs = channel.decode(0);
    control.total_hits += obs.hit_slots.size();
    for (int slot : obs.hit_slots)
      if (slot == 0) ++control.slot0_hits;
  }
  return control;
}

std::vector<int> offsets_for(const ProbeRunOptions& options) {
  std::vector<int> offsets;
  for (int off = 0; off < options.bit_offset_limit; off += 8) offsets.push_back(off);
  if (offsets.empty()) offsets.push_back(0);
  return offsets;
}

OffsetObservation measure_offset(Harness& harness, Channel& channel, const ProbeSpec& spec,
                                 uint64_t operand, int bit_offset,
                                 const ProbeRunOptions& options) {
  Backend& backend = harness.backend();
  bool signal_expected = !backend.capabilities().is_simulation &&
                         harness.strategy() == FaultStrategy::SignalHandler;

  OffsetObservation obs;
  obs.bit_offset = bit_offset;
  obs.rounds = options.rounds;
  channel.flush_all();
  for (uint64_t round = 0; round < options.rounds; ++round) {
    TransientOutcome outcome = harness.run_transient(
        [&] { backend.transient_read(spec, operand, bit_offset, channel); });
    if (signal_expected && outcome.fault_signal == 0)
      raise(ErrorCode::EnvironmentNotRestricted,
            spec.name + " retired without faulting; required: " + spec.restriction);
    ChannelObservation pass = channel.decode(0);
    if (pass.hit_slots.size() == 1)
      ++obs.value_hits[static_cast<unsigned>(pass.hit_slots[0])];
    else if (pass.hit_slots.size() > 1)
      ++obs.discarded;
  }
  return obs;
}

int status_rank(LeakStatus s) {
  switch (s) {
    case LeakStatus::Leaks: return 3;
    case LeakStatus::ZeroForward: return 2;
    case LeakStatus::Unverified: return 1;
    case LeakStatus::NoLeak: return 0;
  }
  return 0;
}

RowStatus to_row_status(LeakStatus s) {
  switch (s) {
    case LeakStatus::Leaks: return RowStatus::Leaks;
    case LeakStatus::ZeroForward: return RowStatus::ZeroForward;
    case LeakStatus::Unverified: return RowStatus::Unverified;
    case LeakStatus::NoLeak: return RowStatus::NoLeak;
  }
  return RowStatus::NoLeak;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  size_t n = x.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::string report_timestamp(bool simulation) {
  if (simulation) return "1970-01-01T00:00:00Z";
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace

LeakVerdict run_probe(Harness& harness, Channel& channel, const ProbeSpec& spec,
                      const ProbeRunOptions& options) {
  Backend& backend = harness.backend();
  if (options.rounds < 16) raise(ErrorCode::InvalidArgument, "rounds must be at least 16");
  if (!backend.restriction_active(harness, spec))
    raise(ErrorCode::EnvironmentNotRestricted,
          spec.name + " executes architecturally; required: " + spec.restriction);

  std::vector<int> offsets = offsets_for(options);
  // The control run spans as many passes as all offsets combined, so the
  // activity comparison is between two equally sized samples.
  ControlStats control = run_control(channel, options.rounds * offsets.size());

  std::vector<uint64_t> operands = spec.operands.empty() ? std::vector<uint64_t>{0} : spec.operands;
  if (!options.sweep_operands) operands.resize(1);

  LeakVerdict best;
  best.status = LeakStatus::NoLeak;
  bool first = true;
  for (uint64_t operand : operands) {
    std::vector<OffsetObservation> observations;
    observations.reserve(offsets.size());
    for (int off : offsets)
      observations.push_back(measure_offset(harness, channel, spec, operand, off, options));
    LeakVerdict verdict = classify(observations, control, options.classifier);
    if (first || status_rank(verdict.status) > status_rank(best.status)) {
      best = verdict;
      first = false;
    }
  }
  return best;
}

LeakVerdict verify_timestamp_leak(Harness& harness, const ProbeSpec& spec, uint64_t threshold,
                                  const ProbeRunOptions& options) {
  Backend& backend = harness.backend();
  if (!backend.restriction_active(harness, spec))
    raise(ErrorCode::EnvironmentNotRestricted,
          spec.name + " executes architecturally; required: " + spec.restriction);
  if (options.timestamp_samples < 4)
    raise(ErrorCode::InvalidArgument, "timestamp verification needs at least 4 samples");

  ChannelConfig config;
  config.symbol_count = 4;
  Channel channel = make_channel(backend, config);
  channel.set_threshold(threshold);

  CountingTimer& timer = harness.counting_timer();

  std::vector<double> values, ticks;
  uint64_t want = static_cast<uint64_t>(options.timestamp_samples);
  uint64_t max_attempts = want * 4;  // spurious hits spoil samples; retry within this budget

  // Control: the same read shape without transient reads measures how many
  // byte decodes pure channel noise produces over the full attempt budget.
  uint64_t control_bytes = 0;
  channel.flush_all();
  for (uint64_t i = 0; i < max_attempts; ++i)
    for (int sym = 0; sym < 4; ++sym)
      if (channel.read_value(sym, options.value_retries)) ++control_bytes;

  uint64_t attempts = 0;
  uint64_t sampled = 0;
  uint64_t decoded_bytes = 0;
  std::vector<ValueEvidence> evidence;

  channel.flush_all();
  while (attempts < max_attempts && sampled < want) {
    ++attempts;
    harness.run_transient([&] { backend.transient_read(spec, 0, 0, channel); });
    uint64_t value = 0;
    bool complete = true;
    for (int sym = 0; sym < 4; ++sym) {
      std::optional<unsigned> byte = channel.read_value(sym, options.value_retries);
      if (!byte) {
        complete = false;
        continue;
      }
      ++decoded_bytes;
      value |= static_cast<uint64_t>(*byte) << (8 * sym);
    }
    if (!complete) continue;
    values.push_back(static_cast<double>(value));
    ticks.push_back(static_cast<double>(timer.read()));
    if (evidence.size() < 4) evidence.push_back({value, 1});
    ++sampled;
  }

  LeakVerdict verdict;
  verdict.rounds = attempts;
  if (sampled < 4) {
    // Too few samples to correlate.  Channel noise alone occasionally
    // assembles a full sample, so partial results count as forwarding only
    // when byte activity stands clearly above the noise control.
    double lambda = static_cast<double>(control_bytes) * static_cast<double>(attempts) /
                    static_cast<double>(max_attempts);
    bool active =
        decoded_bytes >= detection_threshold(lambda, options.classifier) &&
        static_cast<double>(decoded_bytes) >= options.classifier.unverified_margin * lambda;
    verdict.status = active ? LeakStatus::Unverified : LeakStatus::NoLeak;
    if (verdict.status != LeakStatus::NoLeak) verdict.evidence = evidence;
    return verdict;
  }

  verdict.evidence = evidence;
  if (timer.degraded()) {
    verdict.status = LeakStatus::Unverified;
    return verdict;
  }

  // A corrupted byte shows up as one implausible jump and return.  Tolerate
  // isolated corruption: most consecutive deltas must advance, and samples
  // flanked only by bad deltas are dropped before correlating.
  size_t n = values.size();
  std::vector<bool> delta_good(n - 1);
  size_t good = 0;
  for (size_t i = 1; i < n; ++i) {
    uint64_t prev = static_cast<uint64_t>(values[i - 1]);
    uint64_t cur = static_cast<uint64_t>(values[i]);
    uint64_t delta = (cur - prev) & 0xFFFFFFFFULL;  // 32-bit wrap-aware
    delta_good[i - 1] = delta != 0 && delta < (1ULL << 31);
    if (delta_good[i - 1]) ++good;
  }
  bool monotone = good * 4 >= (n - 1) * 3;

  std::vector<double> kept_values, kept_ticks;
  for (size_t i = 0; i < n; ++i) {
    bool bad_before = i > 0 && !delta_good[i - 1];
    bool bad_after = i + 1 < n && !delta_good[i];
    bool isolated = (i == 0 || bad_before) && (i + 1 == n || bad_after);
    if (isolated && (bad_before || bad_after)) continue;
    kept_values.push_back(values[i]);
    kept_ticks.push_back(ticks[i]);
  }
  double corr = kept_values.size() >= 4 ? pearson(kept_values, kept_ticks) : 0.0;

  verdict.status = (monotone && corr >= options.min_timestamp_correlation)
                       ? LeakStatus::Leaks
                       : LeakStatus::Unverified;
  return verdict;
}

std::vector<std::pair<int, LeakVerdict>> sweep_strides(Harness& harness, const ProbeSpec& spec,
                                                       const std::vector<int>& strides,
                                                       const ProbeRunOptions& options) {
  if (strides.empty()) raise(ErrorCode::InvalidArgument, "stride list is empty");
  std::vector<std::pair<int, LeakVerdict>> results;
  for (int stride : strides) {
    ChannelConfig config;
    config.stride_bytes = stride;
    Channel channel = make_channel(harness.backend(), config);
    channel.calibrate(options.calibrate_iterations);
    if (spec.timestamp) {
      results.emplace_back(stride, verify_timestamp_leak(harness, spec,
                                                         channel.config().threshold_cycles,
                                                         options));
    } else {
      results.emplace_back(stride, run_probe(harness, channel, spec, options));
    }
  }
  return results;
}

MachineReport full_scan(Harness& harness, const std::vector<ProbeSpec>& catalog,
                        const ScanOptions& options) {
  Backend& backend = harness.backend();
  backend.rewind();

  MachineReport report;
  MachineIdentity identity = backend.identity();
  report.backend = backend.name();
  report.cpu_model = identity.cpu_model;
  report.microcode = identity.microcode;
  report.microarchitecture = identity.microarchitecture;
  report.profile = backend.profile_name();
  report.seed = backend.run_seed();
  report.stride_bytes = options.channel.stride_bytes;
  report.rounds = options.run.rounds;
  report.timestamp = report_timestamp(backend.capabilities().is_simulation);

  ChannelConfig config = options.channel;
  config.symbol_count = 1;
  Channel channel = make_channel(backend, config);
  uint64_t threshold = channel.calibrate(options.run.calibrate_iterations);

  for (const ProbeSpec& spec : catalog) {
    ProbeResult row;
    row.probe = spec.name;
    try {
      LeakVerdict verdict = spec.timestamp
                                ? verify_timestamp_leak(harness, spec, threshold, options.run)
                                : run_probe(harness, channel, spec, options.run);
      row.status = to_row_status(verdict.status);
      row.evidence = verdict.evidence;
      row.rounds = verdict.rounds;
    } catch (const Error& e) {
      row.status = RowStatus::Skipped;
      row.skip_reason = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace regleak
