#include "study_runner.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "counterleak.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "hw_backend.hpp"
#include "probe_catalog.hpp"
#include "probes.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "sim_backend.hpp"
#include "studies.hpp"
#include "victims.hpp"

namespace regleak {

using nlohmann::json;

namespace {

json parse_options(const std::string& text) {
  if (text.empty()) return json::object();
  json parsed;
  try {
    parsed = json::parse(text);
  } catch (const json::parse_error& e) {
    raise(ErrorCode::InvalidArgument, std::string("options JSON parse error: ") + e.what());
  }
  if (!parsed.is_object()) raise(ErrorCode::InvalidArgument, "options must be a JSON object");
  return parsed;
}

FaultStrategy strategy_from(const json& options) {
  std::string name = options.value("fault_strategy", "signal_handler");
  if (name == "signal_handler") return FaultStrategy::SignalHandler;
  if (name == "transaction_abort") return FaultStrategy::TransactionAbort;
  if (name == "speculative_suppression") return FaultStrategy::SpeculativeSuppression;
  raise(ErrorCode::InvalidArgument, "unknown fault_strategy: " + name);
}

std::string hex_bytes(const std::vector<uint8_t>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

std::string hex_bits_msb_first(const std::vector<bool>& bits) {
  std::vector<uint8_t> bytes((bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) bytes[i / 8] |= static_cast<uint8_t>(0x80 >> (i % 8));
  return hex_bytes(bytes);
}

CounterSelector selector_from(const json& options, const std::string& default_event,
                              uint32_t default_index) {
  CounterSelector selector;
  selector.event_name = options.value("counter_event", default_event);
  selector.counter_index = options.value("counter_index", default_index);
  selector.programmed_by = CounterProgramming::PreExisting;
  return selector;
}

}  // namespace

std::string run_scan_json(Backend& backend, const std::string& options_json) {
  json options = parse_options(options_json);

  ScanOptions scan;
  scan.channel.stride_bytes = options.value("stride_bytes", 4096);
  scan.run.rounds = options.value("rounds", uint64_t{1000});
  scan.run.bit_offset_limit = options.value("bit_offset_limit", 32);
  scan.run.sweep_operands = options.value("sweep_operands", !backend.capabilities().is_simulation);
  scan.run.calibrate_iterations = options.value("calibrate_iterations", 2000);
  scan.run.timestamp_samples = options.value("timestamp_samples", 16);

  std::vector<ProbeSpec> catalog = default_catalog();
  if (options.contains("probes")) {
    if (!options["probes"].is_array())
      raise(ErrorCode::InvalidArgument, "probes must be an array of names");
    std::vector<std::string> names;
    for (const json& name : options["probes"]) names.push_back(name.get<std::string>());
    catalog = catalog_subset(names);
  }

  Harness harness(backend, strategy_from(options));
  if (options.value("tsc_trap", false)) {
    auto* hw = dynamic_cast<HwBackend*>(&backend);
    if (!hw)
      raise(ErrorCode::InvalidArgument, "tsc_trap applies to the hardware backend only");
    hw->trap_timestamp_reads(harness.counting_timer());
  }

  MachineReport report = full_scan(harness, catalog, scan);
  return report_to_json(report);
}

std::string run_counterleak_json(Backend& backend, const std::string& options_json) {
  json options = parse_options(options_json);
  if (!options.contains("counter_event"))
    raise(ErrorCode::InvalidArgument, "counter_event is required");

  CounterLeakOptions leak_options;
  leak_options.bytes = options.value("bytes", 1);
  int samples = options.value("samples", 32);
  if (samples < 1) raise(ErrorCode::InvalidArgument, "samples must be positive");

  ChannelConfig config;
  config.stride_bytes = options.value("stride_bytes", 4096);

  Harness harness(backend, strategy_from(options));
  CounterLeak leak(harness, selector_from(options, "", 0), config, leak_options);

  TraceSeries series;
  series.selector = leak.selector();
  series.victim = "none";
  series.repetition = 0;

  std::vector<uint64_t> sample_cycles, encode_cycles, probe_counts;
  CounterSample previous = leak.leak_counter();
  for (int i = 0; i < samples; ++i) {
    CounterSample current = leak.leak_counter();
    uint64_t raw = (current.value - previous.value) & (leak.wrap_modulus() - 1);
    series.samples.push_back({static_cast<uint64_t>(i), static_cast<int64_t>(raw)});
    sample_cycles.push_back(current.sample_cycles);
    encode_cycles.push_back(current.encode_cycles);
    probe_counts.push_back(current.probe_count);
    previous = current;
  }

  auto median_u64 = [](std::vector<uint64_t> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  auto mean_u64 = [](const std::vector<uint64_t>& v) {
    return std::accumulate(v.begin(), v.end(), uint64_t{0}) / v.size();
  };

  json result;
  result["series"] = json::parse(trace_to_json(series));
  result["stats"] = {{"samples", samples},
                     {"mean_sample_cycles", mean_u64(sample_cycles)},
                     {"median_sample_cycles", median_u64(sample_cycles)},
                     {"mean_encode_cycles", mean_u64(encode_cycles)},
                     {"median_encode_cycles", median_u64(encode_cycles)},
                     {"median_probe_count", median_u64(probe_counts)},
                     {"self_baseline", leak.self_baseline()}};
  return result.dump(2);
}

namespace {

std::string run_spectre_study(Backend& backend, const json& options) {
  SpectreStudyOptions study_options;
  study_options.counter_event = options.value("counter_event", study_options.counter_event);
  study_options.counter_index = options.value("counter_index", study_options.counter_index);
  study_options.bytes = options.value("bytes", study_options.bytes);
  study_options.samples_per_bit = options.value("samples_per_bit", study_options.samples_per_bit);
  study_options.calibration_samples =
      options.value("calibration_samples", study_options.calibration_samples);
  study_options.mistrain_rounds = options.value("mistrain_rounds", study_options.mistrain_rounds);

  size_t secret_bytes = options.value("secret_bytes", size_t{4});
  if (secret_bytes < 1 || secret_bytes > 64)
    raise(ErrorCode::InvalidArgument, "secret_bytes must be in 1..64");

  Rng rng(options.value("seed", backend.run_seed() + 0x5bec7e));
  std::vector<uint8_t> secret(secret_bytes);
  for (uint8_t& b : secret) b = static_cast<uint8_t>(rng.below(256));

  std::vector<uint8_t> public_array(16, 0);
  public_array[1] = 0xFF;

  Harness harness(backend);
  SpectreGadget gadget(public_array, secret, &backend);
  SpectreStudy study(harness, gadget, study_options);
  study.calibrate();
  std::vector<uint8_t> recovered = study.leak_secret(0, secret.size());

  size_t correct_bits = 0;
  for (size_t i = 0; i < secret.size(); ++i) {
    uint8_t diff = secret[i] ^ recovered[i];
    for (int bit = 0; bit < 8; ++bit)
      if (!((diff >> bit) & 1)) ++correct_bits;
  }

  json result = {{"study", "spectre"},
                 {"counter", study_options.counter_event},
                 {"secret_bits", secret.size() * 8},
                 {"secret_hex", hex_bytes(secret)},
                 {"recovered_hex", hex_bytes(recovered)},
                 {"bit_accuracy",
                  static_cast<double>(correct_bits) / static_cast<double>(secret.size() * 8)},
                 {"threshold", study.threshold()}};
  return result.dump(2);
}

std::string run_kaslr_study(Backend& backend, const json& options) {
  KaslrStudyOptions study_options;
  study_options.counter_event = options.value("counter_event", study_options.counter_event);
  study_options.counter_index = options.value("counter_index", study_options.counter_index);
  study_options.bytes = options.value("bytes", study_options.bytes);
  study_options.mad_threshold = options.value("mad_threshold", study_options.mad_threshold);

  size_t candidate_count = options.value("candidates", size_t{64});
  if (candidate_count < 8 || candidate_count > 4096)
    raise(ErrorCode::InvalidArgument, "candidates must be in 8..4096");
  uintptr_t base = options.value("region_base", uintptr_t{0x640000000000});
  uintptr_t step = options.value("region_step", uintptr_t{0x200000});

  std::vector<uintptr_t> candidates;
  candidates.reserve(candidate_count);
  for (size_t i = 0; i < candidate_count; ++i) candidates.push_back(base + i * step);

  Rng rng(options.value("seed", backend.run_seed() + 0xca51));
  size_t planted = options.value("planted_index", rng.below(candidate_count));
  if (planted >= candidate_count)
    raise(ErrorCode::InvalidArgument, "planted_index out of range");

  auto* sim = dynamic_cast<SimBackend*>(&backend);
  if (sim) sim->set_hot_page(candidates[planted]);

  Harness harness(backend);
  KaslrResult scan = kaslr_scan(harness, candidates, study_options);

  json result = {{"study", "kaslr"},
                 {"counter", study_options.counter_event},
                 {"candidates", candidate_count},
                 {"detected_index", scan.detected_index},
                 {"detected_address", scan.detected_index < candidates.size()
                                          ? candidates[scan.detected_index]
                                          : 0},
                 {"anomalies", scan.anomalies},
                 {"median_delta", scan.median},
                 {"mad", scan.mad}};
  if (sim) {
    result["planted_index"] = planted;
    result["hit"] = scan.detected_index == planted;
  }
  return result.dump(2);
}

std::string run_rsa_study(Backend& backend, const json& options) {
  RsaStudyOptions study_options;
  study_options.counter_event = options.value("counter_event", study_options.counter_event);
  study_options.counter_index = options.value("counter_index", study_options.counter_index);
  study_options.bytes = options.value("bytes", study_options.bytes);

  size_t bits = options.value("bits", size_t{64});
  if (bits < 8 || bits > 4096) raise(ErrorCode::InvalidArgument, "bits must be in 8..4096");
  size_t traces = options.value("traces", size_t{25});
  if (traces < 1 || traces > 100000)
    raise(ErrorCode::InvalidArgument, "traces must be in 1..100000");

  Rng rng(options.value("seed", backend.run_seed() + 0x25a));
  std::vector<bool> exponent(bits);
  exponent[0] = true;
  for (size_t i = 1; i < bits; ++i) exponent[i] = rng.chance(0.5);

  BigInt modulus("0xc90102faa48f18b5eac1f76bb88da5f7e0066cb9ed1168bdd6229e1e82884b27");
  BigInt base = 0x10001;

  Harness harness(backend);
  SquareMultiplyVictim victim(base, modulus, exponent, &backend);
  CounterLeak leak(harness,
                   selector_from(options, study_options.counter_event,
                                 study_options.counter_index),
                   ChannelConfig{}, [&] {
                     CounterLeakOptions lo;
                     lo.bytes = study_options.bytes;
                     return lo;
                   }());

  std::vector<std::vector<int64_t>> captured;
  captured.reserve(traces);
  for (size_t t = 0; t < traces; ++t) captured.push_back(rsa_capture_trace(leak, victim));

  RsaRecovery recovery = rsa_recover(captured);
  size_t correct = 0;
  for (size_t i = 0; i < bits; ++i)
    if (recovery.bits[i] == exponent[i]) ++correct;

  json result = {{"study", "rsa"},
                 {"counter", study_options.counter_event},
                 {"bits", bits},
                 {"traces", traces},
                 {"exponent_hex", hex_bits_msb_first(exponent)},
                 {"recovered_hex", hex_bits_msb_first(recovery.bits)},
                 {"bit_accuracy", static_cast<double>(correct) / static_cast<double>(bits)},
                 {"kurtosis", recovery.kurtosis}};
  return result.dump(2);
}

std::string run_zigzagger_study(Backend& backend, const json& options) {
  ZigzagStudyOptions study_options;
  study_options.counter_event = options.value("counter_event", study_options.counter_event);
  study_options.counter_index = options.value("counter_index", study_options.counter_index);
  study_options.bytes = options.value("bytes", study_options.bytes);
  study_options.samples = options.value("samples", study_options.samples);
  study_options.calibration_samples =
      options.value("calibration_samples", study_options.calibration_samples);

  size_t trials = options.value("trials", size_t{12});
  if (trials < 1 || trials > 10000) raise(ErrorCode::InvalidArgument, "trials must be in 1..10000");

  Rng rng(options.value("seed", backend.run_seed() + 0x2122));

  Harness harness(backend);
  ZigzaggerVictim victim(&backend);
  ZigzagStudy study(harness, victim, study_options);
  study.calibrate();

  size_t correct = 0;
  json trial_rows = json::array();
  for (size_t t = 0; t < trials; ++t) {
    int selector = static_cast<int>(rng.below(3));
    int argument = static_cast<int>(rng.below(1000));
    int inferred = study.classify([&] { victim.run_hardened(selector, argument); });
    if (inferred == selector) ++correct;
    trial_rows.push_back({{"selector", selector}, {"inferred", inferred}});
  }

  json result = {{"study", "zigzagger"},
                 {"counter", study_options.counter_event},
                 {"trials", trials},
                 {"success_rate", static_cast<double>(correct) / static_cast<double>(trials)},
                 {"baselines", study.baselines()},
                 {"runs", trial_rows}};
  return result.dump(2);
}

}  // namespace

std::string run_study_json(Backend& backend, const std::string& study,
                           const std::string& options_json) {
  json options = parse_options(options_json);
  if (options.contains("noise_scale")) {
    auto* sim = dynamic_cast<SimBackend*>(&backend);
    if (!sim)
      raise(ErrorCode::InvalidArgument, "noise_scale applies to the simulation backend only");
    sim->scale_counter_noise(options["noise_scale"].get<double>());
  }
  try {
    if (study == "spectre") return run_spectre_study(backend, options);
    if (study == "kaslr") return run_kaslr_study(backend, options);
    if (study == "rsa") return run_rsa_study(backend, options);
    if (study == "zigzagger") return run_zigzagger_study(backend, options);
    raise(ErrorCode::InvalidArgument, "unknown study: " + study);
  } catch (const Error& e) {
    if (e.message().rfind(study + ":", 0) == 0) throw;
    raise(e.code(), study + ": " + e.message());
  }
}

}  // namespace regleak
