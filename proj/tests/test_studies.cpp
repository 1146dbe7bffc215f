// Case studies end to end on the simulation, with synthetic-trace checks for
// the recovery math.
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"

#include "errors.hpp"
#include "harness.hpp"
#include "rng.hpp"
#include "sim_backend.hpp"
#include "studies.hpp"
#include "test_support.hpp"
#include "victims.hpp"

using namespace regleak;
using test_support::study_profile;

TEST_CASE("spectre study recovers a planted secret bit for bit") {
  SimBackend backend(study_profile(501));
  Harness harness(backend);

  std::vector<uint8_t> public_array(16, 0);
  public_array[1] = 0xFF;
  std::vector<uint8_t> secret = {0xDE, 0xAD, 0xBE, 0xEF};
  SpectreGadget gadget(public_array, secret, &backend);

  SpectreStudyOptions options;
  options.samples_per_bit = 15;
  options.calibration_samples = 31;
  SpectreStudy study(harness, gadget, options);

  CHECK_FALSE(study.calibrated());
  study.calibrate();
  CHECK(study.calibrated());
  // The decision threshold sits between "no division" (0) and "one division"
  // (the div_exec increment, 40).
  CHECK(study.threshold() > 0.0);
  CHECK(study.threshold() < 40.0);

  std::vector<uint8_t> recovered = study.leak_secret(0, secret.size());
  CHECK(recovered == secret);
}

TEST_CASE("spectre calibration fails without a responsive counter") {
  LeakageProfile profile = study_profile(502);
  profile.counters["CYCLES_DIV_BUSY.ALL"].events.clear();  // counter ignores division
  SimBackend backend(profile);
  Harness harness(backend);

  std::vector<uint8_t> public_array(16, 0);
  public_array[1] = 0xFF;
  SpectreGadget gadget(public_array, {0x42}, &backend);
  SpectreStudy study(harness, gadget);
  try {
    study.calibrate();
    FAIL("expected NoSignal");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoSignal);
  }
}

TEST_CASE("kaslr scan flags the mapped page as the anomaly") {
  SimBackend backend(study_profile(503));
  Harness harness(backend);

  std::vector<uintptr_t> candidates;
  const uintptr_t base = 0x640000000000;
  for (size_t i = 0; i < 32; ++i) candidates.push_back(base + i * 0x200000);
  const size_t planted = 19;
  backend.set_hot_page(candidates[planted]);

  KaslrResult result = kaslr_scan(harness, candidates);
  CHECK(result.detected_index == planted);
  CHECK(!result.anomalies.empty());
  REQUIRE(result.deltas.size() == candidates.size());
  // The mapped page completes fewer walks than the unmapped baseline.
  CHECK(static_cast<double>(result.deltas[planted]) < result.median);
  CHECK(result.mad >= 1.0);
}

TEST_CASE("kaslr scan refuses degenerate candidate sets") {
  SimBackend backend(study_profile(504));
  Harness harness(backend);
  std::vector<uintptr_t> too_few = {0x1000, 0x2000};
  CHECK_THROWS_AS(kaslr_scan(harness, too_few), Error);
}

TEST_CASE("kaslr scan raises NoAnomaly when nothing is mapped") {
  SimBackend backend(study_profile(505));
  Harness harness(backend);
  std::vector<uintptr_t> candidates;
  for (size_t i = 0; i < 16; ++i) candidates.push_back(0x640000000000 + i * 0x200000);
  // No hot page planted: every candidate walks the same number of pages.
  try {
    kaslr_scan(harness, candidates);
    FAIL("expected NoAnomaly");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoAnomaly);
  }
}

TEST_CASE("rsa traces through the live pipeline recover the exponent") {
  SimBackend backend(study_profile(506));
  Harness harness(backend);

  Rng rng(2026);
  std::vector<bool> exponent(48);
  exponent[0] = true;
  for (size_t i = 1; i < exponent.size(); ++i) exponent[i] = rng.chance(0.5);

  BigInt modulus("0xc90102faa48f18b5eac1f76bb88da5f7e0066cb9ed1168bdd6229e1e82884b27");
  SquareMultiplyVictim victim(BigInt(0x10001), modulus, exponent, &backend);

  CounterSelector selector;
  selector.event_name = "BR_INST_RETIRED.NEAR_TAKEN";
  selector.counter_index = 2;
  CounterLeakOptions leak_options;
  leak_options.bytes = 2;
  CounterLeak leak(harness, selector, ChannelConfig{}, leak_options);

  std::vector<std::vector<int64_t>> traces;
  for (int t = 0; t < 20; ++t) traces.push_back(rsa_capture_trace(leak, victim));
  for (const auto& trace : traces) REQUIRE(trace.size() == exponent.size());

  RsaRecovery recovery = rsa_recover(traces);
  CHECK(recovery.bits == exponent);
  CHECK(recovery.low_center < recovery.high_center);
}

TEST_CASE("rsa recovery thresholds synthetic bimodal traces") {
  // Square-only steps distribute around 16, square+multiply around 34,
  // mirroring the branch counter's increments.
  Rng rng(77);
  std::vector<bool> exponent(64);
  for (size_t i = 0; i < exponent.size(); ++i) exponent[i] = rng.chance(0.5);
  exponent[0] = true;

  std::vector<std::vector<int64_t>> traces;
  for (int t = 0; t < 50; ++t) {
    std::vector<int64_t> trace;
    for (bool bit : exponent) {
      double center = bit ? 34.0 : 16.0;
      trace.push_back(static_cast<int64_t>(std::llround(rng.normal(center, 6.0))));
    }
    traces.push_back(std::move(trace));
  }

  RsaRecovery recovery = rsa_recover(traces);
  CHECK(recovery.bits == exponent);
  // Per-bit means from a balanced key are strongly bimodal.
  CHECK(recovery.kurtosis < -0.5);
  CHECK(recovery.low_center == doctest::Approx(16.0).epsilon(0.15));
  CHECK(recovery.high_center == doctest::Approx(34.0).epsilon(0.15));
}

TEST_CASE("rsa recovery works on lopsided keys through the separation gate") {
  // Five set bits out of 64: kurtosis alone cannot call this bimodal, the
  // cluster separation has to.
  std::vector<bool> exponent(64, false);
  for (size_t i : {0ul, 13ul, 29ul, 41ul, 57ul}) exponent[i] = true;

  Rng rng(78);
  std::vector<std::vector<int64_t>> traces;
  for (int t = 0; t < 200; ++t) {
    std::vector<int64_t> trace;
    for (bool bit : exponent)
      trace.push_back(static_cast<int64_t>(std::llround(rng.normal(bit ? 34.0 : 16.0, 4.0))));
    traces.push_back(std::move(trace));
  }

  RsaRecovery recovery = rsa_recover(traces);
  CHECK(recovery.bits == exponent);
}

TEST_CASE("rsa recovery rejects degenerate distributions") {
  // All steps identical: there is no square/multiply split to threshold.
  std::vector<std::vector<int64_t>> flat(10, std::vector<int64_t>(32, 16));
  try {
    rsa_recover(flat);
    FAIL("expected DegenerateDistribution");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateDistribution);
  }

  CHECK_THROWS_AS(rsa_recover({}), Error);
  CHECK_THROWS_AS(rsa_recover({{}}), Error);
  CHECK_THROWS_AS(rsa_recover({{1, 2}, {1}}), Error);
}

TEST_CASE("zigzag study classifies hardened runs by instruction counts") {
  SimBackend backend(study_profile(507));
  Harness harness(backend);
  ZigzaggerVictim victim(&backend);

  ZigzagStudyOptions options;
  options.calibration_samples = 31;
  options.samples = 31;
  ZigzagStudy study(harness, victim, options);
  study.calibrate();

  REQUIRE(study.baselines().size() == 3);
  // Dispatch (20) plus each block's count, noise-free medians.
  CHECK(study.baselines()[0] == doctest::Approx(140.0).epsilon(0.05));
  CHECK(study.baselines()[1] == doctest::Approx(155.0).epsilon(0.05));
  CHECK(study.baselines()[2] == doctest::Approx(170.0).epsilon(0.05));

  Rng rng(507);
  for (int trial = 0; trial < 12; ++trial) {
    int selector = static_cast<int>(rng.below(3));
    int argument = static_cast<int>(rng.below(1000));
    int inferred = study.classify([&] { victim.run_hardened(selector, argument); });
    CHECK(inferred == selector);
  }
}

TEST_CASE("zigzag calibration rejects indistinguishable paths") {
  LeakageProfile profile = study_profile(508);
  // Collapse every block to the same noise-free instruction count so the
  // three calibration medians coincide exactly.
  auto& events = profile.counters["INST_RETIRED.ANY"].events;
  events["zz_dispatch"] = {20, 0.0};
  events["zz_block_a"] = {130, 0.0};
  events["zz_block_b"] = {130, 0.0};
  events["zz_block_c"] = {130, 0.0};
  SimBackend backend(profile);
  Harness harness(backend);
  ZigzaggerVictim victim(&backend);
  ZigzagStudyOptions options;
  options.calibration_samples = 15;
  ZigzagStudy study(harness, victim, options);
  try {
    study.calibrate();
    FAIL("expected AmbiguousBaselines");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AmbiguousBaselines);
  }
}
