// Probe pipeline: per-behavior verdicts, value reconstruction across byte
// offsets, the timestamp verifier, and whole-scan behavior.
#include <string>
#include <vector>

#include "doctest.h"

#include "channel.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "probe_catalog.hpp"
#include "probes.hpp"
#include "report.hpp"
#include "sim_backend.hpp"
#include "test_support.hpp"

using namespace regleak;
using test_support::leaky_profile;
using test_support::silent_profile;

namespace {

ProbeRunOptions fast_options() {
  ProbeRunOptions options;
  options.rounds = 200;
  options.calibrate_iterations = 64;
  return options;
}

LeakVerdict run_one(SimBackend& backend, const std::string& probe, const ProbeRunOptions& options) {
  Harness harness(backend);
  const ProbeSpec* spec = find_probe(probe);
  REQUIRE(spec != nullptr);
  if (spec->timestamp) {
    Channel channel = make_channel(backend, ChannelConfig{});
    uint64_t threshold = channel.calibrate(options.calibrate_iterations);
    return verify_timestamp_leak(harness, *spec, threshold, options);
  }
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(options.calibrate_iterations);
  return run_probe(harness, channel, *spec, options);
}

}  // namespace

TEST_CASE("a leaking register value is recovered exactly") {
  LeakageProfile profile = leaky_profile("rdpmc", 0x01c9a3f2);
  SimBackend backend(profile);
  LeakVerdict verdict = run_one(backend, "rdpmc", fast_options());
  CHECK(verdict.status == LeakStatus::Leaks);
  REQUIRE(verdict.evidence.size() == 1);
  CHECK(verdict.evidence[0].value == 0x01c9a3f2);
}

TEST_CASE("values wider than the offset sweep are recovered modulo the sweep") {
  // Only the low 32 bits are swept by default; the high bits stay unseen.
  LeakageProfile profile = leaky_profile("rdfsbase", 0x7f43b9c14740);
  SimBackend backend(profile);
  LeakVerdict verdict = run_one(backend, "rdfsbase", fast_options());
  CHECK(verdict.status == LeakStatus::Leaks);
  REQUIRE(verdict.evidence.size() == 1);
  CHECK(verdict.evidence[0].value == 0xb9c14740);
}

TEST_CASE("a wider offset limit recovers the full value") {
  LeakageProfile profile = leaky_profile("rdfsbase", 0x7f43b9c14740);
  SimBackend backend(profile);
  ProbeRunOptions options = fast_options();
  options.bit_offset_limit = 64;
  LeakVerdict verdict = run_one(backend, "rdfsbase", options);
  CHECK(verdict.status == LeakStatus::Leaks);
  REQUIRE(verdict.evidence.size() == 1);
  CHECK(verdict.evidence[0].value == 0x7f43b9c14740);
}

TEST_CASE("a silent probe is NoLeak") {
  SimBackend backend(silent_profile());
  LeakVerdict verdict = run_one(backend, "rdpmc", fast_options());
  CHECK(verdict.status == LeakStatus::NoLeak);
  CHECK(verdict.evidence.empty());
}

TEST_CASE("zero forwarding is distinguished from silence") {
  LeakageProfile profile = silent_profile();
  profile.probes["str"] = {ProbeBehaviorKind::ZeroForward, 0};
  SimBackend backend(profile);
  LeakVerdict verdict = run_one(backend, "str", fast_options());
  CHECK(verdict.status == LeakStatus::ZeroForward);
}

TEST_CASE("verdicts hold under decode noise") {
  LeakageProfile noisy = leaky_profile("rdpmc", 0xb4d903, 77);
  noisy.spurious_hit_rate = 0.05;
  SimBackend backend(noisy);
  LeakVerdict verdict = run_one(backend, "rdpmc", fast_options());
  CHECK(verdict.status == LeakStatus::Leaks);
  REQUIRE(verdict.evidence.size() == 1);
  CHECK(verdict.evidence[0].value == 0xb4d903);

  LeakageProfile quiet = silent_profile(78);
  quiet.spurious_hit_rate = 0.05;
  SimBackend backend2(quiet);
  LeakVerdict v2 = run_one(backend2, "rdpmc", fast_options());
  CHECK(v2.status == LeakStatus::NoLeak);
}

TEST_CASE("a true timestamp leak verifies as Leaks") {
  LeakageProfile profile = silent_profile();
  profile.probes["rdtsc"] = {ProbeBehaviorKind::Timestamp, 0};
  SimBackend backend(profile);
  LeakVerdict verdict = run_one(backend, "rdtsc", fast_options());
  CHECK(verdict.status == LeakStatus::Leaks);
  CHECK_FALSE(verdict.evidence.empty());
}

TEST_CASE("changing values without time correlation stay Unverified") {
  LeakageProfile profile = silent_profile();
  profile.probes["rdtsc"] = {ProbeBehaviorKind::UnverifiedTimestamp, 0};
  SimBackend backend(profile);
  LeakVerdict verdict = run_one(backend, "rdtsc", fast_options());
  CHECK(verdict.status == LeakStatus::Unverified);
}

TEST_CASE("a silent timestamp probe is NoLeak even under noise") {
  LeakageProfile profile = silent_profile(31);
  profile.spurious_hit_rate = 0.05;
  SimBackend backend(profile);
  LeakVerdict verdict = run_one(backend, "rdtsc", fast_options());
  CHECK(verdict.status == LeakStatus::NoLeak);
}

TEST_CASE("timestamp verification survives heavy decode noise") {
  LeakageProfile profile = silent_profile(32);
  profile.probes["rdtscp"] = {ProbeBehaviorKind::Timestamp, 0};
  profile.spurious_hit_rate = 0.15;
  SimBackend backend(profile);
  LeakVerdict verdict = run_one(backend, "rdtscp", fast_options());
  CHECK(verdict.status == LeakStatus::Leaks);
}

TEST_CASE("run_probe validates its options") {
  SimBackend backend(silent_profile());
  Harness harness(backend);
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(64);
  const ProbeSpec* spec = find_probe("rdpmc");
  ProbeRunOptions options;
  options.rounds = 8;  // below the minimum
  CHECK_THROWS_AS(run_probe(harness, channel, *spec, options), Error);
}

TEST_CASE("operand sweeps keep the strongest verdict") {
  // rdpmc has four catalog operands; the profile leaks regardless of which
  // counter index is named, so sweeping must not dilute the verdict.
  LeakageProfile profile = leaky_profile("rdpmc", 0x42);
  SimBackend backend(profile);
  ProbeRunOptions options = fast_options();
  options.sweep_operands = true;
  options.rounds = 64;
  LeakVerdict verdict = run_one(backend, "rdpmc", options);
  CHECK(verdict.status == LeakStatus::Leaks);
}

TEST_CASE("sweep_strides runs one verdict per stride") {
  LeakageProfile profile = leaky_profile("sldt", 0x48);
  SimBackend backend(profile);
  Harness harness(backend);
  const ProbeSpec* spec = find_probe("sldt");
  ProbeRunOptions options = fast_options();
  options.rounds = 64;

  auto results = sweep_strides(harness, *spec, {1024, 2048, 4096}, options);
  REQUIRE(results.size() == 3);
  for (const auto& [stride, verdict] : results) {
    CAPTURE(stride);
    CHECK(verdict.status == LeakStatus::Leaks);
    REQUIRE(verdict.evidence.size() == 1);
    CHECK(verdict.evidence[0].value == 0x48);
  }
  CHECK(results[0].first == 1024);
  CHECK(results[1].first == 2048);
  CHECK(results[2].first == 4096);

  CHECK_THROWS_AS(sweep_strides(harness, *spec, {}, options), Error);
}

TEST_CASE("full_scan emits one row per catalog probe") {
  LeakageProfile profile = silent_profile();
  profile.probes["rdpmc"] = {ProbeBehaviorKind::LeakValue, 0x1c9a3f2};
  profile.probes["str"] = {ProbeBehaviorKind::ZeroForward, 0};
  profile.probes["rdtsc"] = {ProbeBehaviorKind::Timestamp, 0};
  SimBackend backend(profile);
  Harness harness(backend);

  ScanOptions options;
  options.run = fast_options();
  MachineReport report = full_scan(harness, default_catalog(), options);

  REQUIRE(report.rows.size() == default_catalog().size());
  CHECK(report.backend == "sim");
  CHECK(report.cpu_model == "Test CPU");
  CHECK(report.profile == "test-silent");
  CHECK(report.rounds == options.run.rounds);

  for (const ProbeResult& row : report.rows) {
    CAPTURE(row.probe);
    if (row.probe == "rdpmc") {
      CHECK(row.status == RowStatus::Leaks);
      REQUIRE(row.evidence.size() == 1);
      CHECK(row.evidence[0].value == 0x1c9a3f2);
    } else if (row.probe == "str") {
      CHECK(row.status == RowStatus::ZeroForward);
    } else if (row.probe == "rdtsc") {
      CHECK(row.status == RowStatus::Leaks);
    } else {
      CHECK(row.status == RowStatus::NoLeak);
    }
  }
}

TEST_CASE("scans replay identically for one profile and seed") {
  LeakageProfile profile = leaky_profile("rdgsbase", 0x7f9e031f8000, 6900);
  profile.spurious_hit_rate = 0.03;
  profile.probes["rdtscp"] = {ProbeBehaviorKind::Timestamp, 0};
  SimBackend backend(profile);
  Harness harness(backend);

  ScanOptions options;
  options.run = fast_options();
  MachineReport first = full_scan(harness, default_catalog(), options);
  MachineReport second = full_scan(harness, default_catalog(), options);
  CHECK(first == second);
  CHECK(report_to_json(first) == report_to_json(second));
}

TEST_CASE("probe subsets preserve catalog order and reject unknowns") {
  std::vector<ProbeSpec> subset = catalog_subset({"sldt", "rdpmc"});
  REQUIRE(subset.size() == 2);
  CHECK(subset[0].name == "rdpmc");  // catalog order, not request order
  CHECK(subset[1].name == "sldt");
  CHECK_THROWS_AS(catalog_subset({"rdpmc", "florp"}), Error);
}
