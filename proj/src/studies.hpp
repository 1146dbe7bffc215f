#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "counterleak.hpp"
#include "harness.hpp"
#include "victims.hpp"

namespace regleak {

// ---------------------------------------------------------------------------
// Out-of-bounds read recovery through divider busy-cycles.

struct SpectreStudyOptions {
  std::string counter_event = "CYCLES_DIV_BUSY.ALL";
  uint32_t counter_index = 0;
  int bytes = 4;
  int samples_per_bit = 50;
  int calibration_samples = 100;
  int mistrain_rounds = 6;
};

// The gadget's public array must start with a known clear byte at [0] and a
// known set byte at [1]; those anchor the calibration distributions.
class SpectreStudy {
 public:
  SpectreStudy(Harness& harness, SpectreGadget& gadget, SpectreStudyOptions options = {});

  void calibrate();
  bool calibrated() const { return calibrated_; }
  double threshold() const { return threshold_; }

  int leak_bit(size_t secret_index, unsigned bit);
  std::vector<uint8_t> leak_secret(size_t offset, size_t count);

 private:
  int64_t sample_delta(size_t index, unsigned bit);
  double median_delta(size_t index, unsigned bit, int samples);

  Harness& harness_;
  SpectreGadget& gadget_;
  SpectreStudyOptions options_;
  CounterLeak leak_;
  double threshold_ = 0.0;
  bool calibrated_ = false;
};

// ---------------------------------------------------------------------------
// Mapped-region search through page-walk completions.

struct KaslrStudyOptions {
  std::string counter_event = "DTLB_LOAD_MISSES.WALK_COMPLETED_2M_4M";
  uint32_t counter_index = 1;
  int bytes = 2;
  double mad_threshold = 3.0;
  double mad_floor = 1.0;  // integer counters collapse the MAD to 0 otherwise
};

struct KaslrResult {
  std::vector<int64_t> deltas;       // one per candidate
  std::vector<size_t> anomalies;     // indices beyond the deviation threshold
  size_t detected_index = 0;         // the anomaly with the fewest walks
  double median = 0.0;
  double mad = 0.0;
};

// Probes every candidate address transiently and flags deviation outliers.
// The mapped-and-cached page completes fewer walks than unmapped ones.
KaslrResult kaslr_scan(Harness& harness, const std::vector<uintptr_t>& candidates,
                       const KaslrStudyOptions& options = {});

// ---------------------------------------------------------------------------
// Exponent recovery from taken-branch counts.

struct RsaStudyOptions {
  std::string counter_event = "BR_INST_RETIRED.NEAR_TAKEN";
  uint32_t counter_index = 2;
  int bytes = 2;
};

struct RsaRecovery {
  std::vector<bool> bits;
  double kurtosis = 0.0;
  double low_center = 0.0;
  double high_center = 0.0;
};

// One trace: the per-step counter delta for every exponent bit, captured
// while the victim walks its exponent once.
std::vector<int64_t> rsa_capture_trace(CounterLeak& leak, SquareMultiplyVictim& victim);

// Averages traces per bit position, checks that the per-bit means really
// split into two modes, and thresholds at the midpoint of the 2-means
// centers.  All traces must be equally long.
RsaRecovery rsa_recover(const std::vector<std::vector<int64_t>>& traces);

// ---------------------------------------------------------------------------
// Control-flow classification despite branch-stream hardening.

struct ZigzagStudyOptions {
  std::string counter_event = "INST_RETIRED.ANY";
  uint32_t counter_index = 3;
  int bytes = 2;
  int calibration_samples = 101;
  int samples = 101;
};

class ZigzagStudy {
 public:
  ZigzagStudy(Harness& harness, ZigzaggerVictim& victim, ZigzagStudyOptions options = {});

  // Per-selector baseline medians from known runs.
  void calibrate();
  const std::vector<double>& baselines() const { return baselines_; }

  // Runs the callable `samples` times and matches the median delta to the
  // nearest baseline.
  int classify(const std::function<void()>& unknown_run);

 private:
  Harness& harness_;
  ZigzaggerVictim& victim_;
  ZigzagStudyOptions options_;
  CounterLeak leak_;
  std::vector<double> baselines_;
};

}  // namespace regleak
