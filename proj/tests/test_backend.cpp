// Simulation backend: profile document handling, determinism, and the
// counter/timing models the pipeline suites build on.
#include <csignal>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"

#include "channel.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "probe_catalog.hpp"
#include "sim_backend.hpp"
#include "test_support.hpp"

using namespace regleak;
using test_support::silent_profile;
using test_support::study_profile;

namespace {

// Error paths must name the offending field so a hand-edited profile is
// debuggable from the message alone.
void expect_profile_error(const std::string& text, const std::string& field) {
  try {
    profile_from_json_text(text);
    FAIL("expected ProfileInvalid for field ", field);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ProfileInvalid);
    CHECK(e.message().find(field) != std::string::npos);
  }
}

}  // namespace

TEST_CASE("profile json round-trips through render and parse") {
  LeakageProfile profile = study_profile(77);
  profile.probes["rdpmc"] = {ProbeBehaviorKind::LeakValue, 0xabcdef};
  profile.probes["rdtsc"] = {ProbeBehaviorKind::Timestamp, 0};
  profile.probes["str"] = {ProbeBehaviorKind::ZeroForward, 0};
  profile.spurious_hit_rate = 0.125;
  profile.timing.hit_cycles = 42;

  LeakageProfile parsed = profile_from_json_text(profile_to_json_text(profile));

  CHECK(parsed.name == profile.name);
  CHECK(parsed.cpu_model == profile.cpu_model);
  CHECK(parsed.microcode == profile.microcode);
  CHECK(parsed.microarchitecture == profile.microarchitecture);
  CHECK(parsed.spurious_hit_rate == profile.spurious_hit_rate);
  CHECK(parsed.seed == profile.seed);
  CHECK(parsed.timing.hit_cycles == profile.timing.hit_cycles);
  CHECK(parsed.timing.miss_cycles == profile.timing.miss_cycles);
  REQUIRE(parsed.probes.size() == profile.probes.size());
  CHECK(parsed.probes.at("rdpmc").kind == ProbeBehaviorKind::LeakValue);
  CHECK(parsed.probes.at("rdpmc").value == 0xabcdef);
  CHECK(parsed.probes.at("rdtsc").kind == ProbeBehaviorKind::Timestamp);
  REQUIRE(parsed.counters.size() == profile.counters.size());
  const CounterModel& branches = parsed.counters.at("BR_INST_RETIRED.NEAR_TAKEN");
  CHECK(branches.counter_index == 2);
  CHECK(branches.initial == 4000);
  CHECK(branches.self_increment == 25);
  CHECK(branches.events.at("exp_square").increment == 16);
  CHECK(branches.events.at("exp_square").noise_sigma == doctest::Approx(4.0));
}

TEST_CASE("profile parse errors name the offending field") {
  expect_profile_error("[]", "profile");
  expect_profile_error(R"({"name":"x","spurious_hit_rate":1.5})", "spurious_hit_rate");
  expect_profile_error(R"({"name":"x","spurious_hit_rate":"high"})", "spurious_hit_rate");
  expect_profile_error(R"({"name":"x","probes":{"rdpmc":{"behavior":"glows"}}})",
                       "probes.rdpmc.behavior");
  expect_profile_error(R"({"name":"x","probes":{"rdpmc":{}}})", "probes.rdpmc.behavior");
  expect_profile_error(R"({"name":"x","probes":{"rdpmc":{"behavior":"leak_value"}}})",
                       "probes.rdpmc.value");
  expect_profile_error(R"({"name":"x","probes":{"florp":{"behavior":"silent"}}})", "florp");
  expect_profile_error(R"({"name":"x","counters":{"E":{"self_increment":1.5}}})",
                       "counters.E.self_increment");
  expect_profile_error(R"({"name":"x","counters":{"E":{"events":{"v":{"noise_sigma":-1}}}}})",
                       "counters.E.events.v.noise_sigma");
  expect_profile_error(R"({"name":"x","timing":{"hit_cycles":0}})", "timing");
  CHECK_THROWS_AS(profile_from_json_text("not json"), Error);
  CHECK_THROWS_AS(load_profile("/nonexistent/profile.json"), Error);
}

TEST_CASE("simulation capabilities and identity reflect the profile") {
  LeakageProfile profile = silent_profile(5);
  SimBackend backend(profile);

  BackendCapabilities caps = backend.capabilities();
  CHECK(caps.is_simulation);
  CHECK(caps.has_cycle_counter);

  MachineIdentity id = backend.identity();
  CHECK(id.cpu_model == "Test CPU");
  CHECK(id.microcode == "0x1");
  CHECK(id.microarchitecture == "test");
  CHECK(backend.profile_name() == "test-silent");
  CHECK(backend.name() == "sim");
}

TEST_CASE("seed override takes precedence over the profile seed") {
  LeakageProfile profile = silent_profile(5);
  CHECK(SimBackend(profile).run_seed() == 5);
  CHECK(SimBackend(profile, 99).run_seed() == 99);
}

TEST_CASE("two backends from one profile replay identical runs") {
  LeakageProfile profile = study_profile(321);
  profile.spurious_hit_rate = 0.1;
  SimBackend a(profile);
  SimBackend b(profile);

  auto drive = [](SimBackend& backend) {
    std::vector<uint64_t> record;
    Harness harness(backend);
    Channel channel = make_channel(backend, ChannelConfig{});
    channel.calibrate(64);
    for (int i = 0; i < 32; ++i) {
      backend.victim_event("exp_square", 1);
      harness.run_transient([&] {
        CounterSelector sel;
        sel.event_name = "BR_INST_RETIRED.NEAR_TAKEN";
        sel.counter_index = 2;
        backend.transient_counter_read(sel, channel);
      });
      ChannelObservation obs = channel.decode(0);
      for (int slot : obs.hit_slots) record.push_back(static_cast<uint64_t>(slot));
      record.push_back(backend.counter_value("BR_INST_RETIRED.NEAR_TAKEN"));
    }
    record.push_back(backend.clock());
    return record;
  };

  // One harness per process: drive them in sequence.
  std::vector<uint64_t> first = drive(a);
  std::vector<uint64_t> second = drive(b);
  CHECK(first == second);
}

TEST_CASE("rewind restores counters, clock, and randomness") {
  LeakageProfile profile = study_profile(11);
  profile.spurious_hit_rate = 0.2;
  SimBackend backend(profile);

  // Everything that consumes randomness happens after the rewind, exactly
  // like a full scan replays.
  auto drive = [&] {
    backend.rewind();
    std::vector<uint64_t> record;
    Channel channel = make_channel(backend, ChannelConfig{});
    channel.calibrate(64);
    for (int i = 0; i < 24; ++i) {
      backend.victim_event("div_exec", 2);
      channel.flush_all();
      ChannelObservation obs = channel.decode(0);
      for (int slot : obs.hit_slots) record.push_back(static_cast<uint64_t>(slot));
    }
    record.push_back(backend.counter_value("CYCLES_DIV_BUSY.ALL"));
    record.push_back(backend.clock());
    return record;
  };

  std::vector<uint64_t> first = drive();
  CHECK(backend.clock() != 0);
  backend.rewind();
  CHECK(backend.clock() == 0);
  CHECK(backend.counter_value("CYCLES_DIV_BUSY.ALL") == 1000);
  std::vector<uint64_t> second = drive();
  CHECK(first == second);
}

TEST_CASE("slot timing follows the profile hit and miss cycles") {
  LeakageProfile profile = silent_profile(3);
  profile.timing.hit_cycles = 60;
  profile.timing.miss_cycles = 350;
  SimBackend backend(profile);
  ChannelConfig config;
  auto memory = backend.make_channel_memory(config);

  memory->flush_slot(0, 7);
  CHECK(memory->time_slot(0, 7) == 350);
  memory->touch_slot(0, 7);
  CHECK(memory->time_slot(0, 7) == 60);
  // Timing a slot reloads it, so the next read is warm again.
  CHECK(memory->time_slot(0, 7) == 60);
  memory->flush_slot(0, 7);
  CHECK(memory->time_slot(0, 7) == 350);
}

TEST_CASE("decode passes inject spurious hits at the configured rate") {
  LeakageProfile profile = silent_profile(1234);
  profile.spurious_hit_rate = 0.25;
  SimBackend backend(profile);
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(64);

  const int passes = 4000;
  int passes_with_hits = 0;
  channel.flush_all();
  for (int i = 0; i < passes; ++i) {
    ChannelObservation obs = channel.decode(0);
    REQUIRE(obs.hit_slots.size() <= 1);
    if (!obs.hit_slots.empty()) ++passes_with_hits;
  }

  // Binomial(4000, 0.25): five sigma is about 137.
  double expected = passes * 0.25;
  double sigma = std::sqrt(passes * 0.25 * 0.75);
  CHECK(std::abs(passes_with_hits - expected) < 5.0 * sigma);
}

TEST_CASE("zero spurious rate keeps control passes perfectly quiet") {
  LeakageProfile profile = silent_profile(9);
  SimBackend backend(profile);
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(64);
  channel.flush_all();
  for (int i = 0; i < 2000; ++i) CHECK(channel.decode(0).hit_slots.empty());
}

TEST_CASE("victim events move exactly the counters that subscribe to them") {
  LeakageProfile profile = study_profile(2);
  for (auto& [name, model] : profile.counters)
    for (auto& [event, rule] : model.events) rule.noise_sigma = 0.0;
  SimBackend backend(profile);

  backend.victim_event("exp_square", 3);
  CHECK(backend.counter_value("BR_INST_RETIRED.NEAR_TAKEN") == 4000 + 3 * 16);
  CHECK(backend.counter_value("CYCLES_DIV_BUSY.ALL") == 1000);
  CHECK(backend.counter_value("INST_RETIRED.ANY") == 90000);

  backend.victim_event("div_exec", 1);
  CHECK(backend.counter_value("CYCLES_DIV_BUSY.ALL") == 1040);

  CHECK_THROWS_AS(backend.counter_value("NOT_A_COUNTER"), Error);
}

TEST_CASE("mistraining arms speculation until consumed") {
  LeakageProfile profile = study_profile(4);
  SimBackend backend(profile);

  CHECK_FALSE(backend.speculation_armed());
  backend.notify_mistrain(6);
  CHECK(backend.speculation_armed());
  backend.consume_speculation();
  CHECK_FALSE(backend.speculation_armed());
}

TEST_CASE("counter reads self-increment and honor auto advance") {
  LeakageProfile profile = study_profile(6);
  profile.counters["CYCLES_DIV_BUSY.ALL"].auto_increment = 7;
  SimBackend backend(profile);
  Harness harness(backend);
  Channel channel = make_channel(backend, [] {
    ChannelConfig c;
    c.symbol_count = 2;
    return c;
  }());
  channel.calibrate(64);

  CounterSelector sel;
  sel.event_name = "CYCLES_DIV_BUSY.ALL";
  sel.counter_index = 0;
  harness.run_transient([&] { backend.transient_counter_read(sel, channel); });

  // The encode snapshots the pre-read value; the advance lands afterwards.
  ChannelObservation low = channel.decode(0);
  ChannelObservation high = channel.decode(1);
  REQUIRE(low.hit_slots.size() == 1);
  REQUIRE(high.hit_slots.size() == 1);
  CHECK(low.hit_slots[0] == static_cast<int>(1000 & 0xFF));
  CHECK(high.hit_slots[0] == static_cast<int>((1000 >> 8) & 0xFF));
  CHECK(backend.counter_value("CYCLES_DIV_BUSY.ALL") == 1000 + 3 + 7);
}

TEST_CASE("transient bodies refuse to run outside an armed window") {
  LeakageProfile profile = study_profile(8);
  profile.probes["rdpmc"] = {ProbeBehaviorKind::LeakValue, 0x42};
  SimBackend backend(profile);
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(64);

  const ProbeSpec* rdpmc = find_probe("rdpmc");
  REQUIRE(rdpmc != nullptr);
  CHECK_THROWS_AS(backend.transient_read(*rdpmc, 0, 0, channel), Error);

  CounterSelector sel;
  sel.event_name = "CYCLES_DIV_BUSY.ALL";
  CHECK_THROWS_AS(backend.transient_counter_read(sel, channel), Error);
  CHECK_THROWS_AS(backend.transient_touch(0x1000), Error);
}

TEST_CASE("transient reads leave a pending fault for the harness") {
  LeakageProfile profile = silent_profile(12);
  SimBackend backend(profile);
  Harness harness(backend);
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(64);

  const ProbeSpec* rdpmc = find_probe("rdpmc");
  TransientOutcome outcome =
      harness.run_transient([&] { backend.transient_read(*rdpmc, 0, 0, channel); });
  CHECK(outcome.completed);
  CHECK(outcome.fault_signal == SIGSEGV);

  // An empty body retires without faulting.
  outcome = harness.run_transient([] {});
  CHECK(outcome.completed);
  CHECK(outcome.fault_signal == 0);
}

TEST_CASE("scale_counter_noise multiplies every event sigma") {
  LeakageProfile profile = study_profile(14);
  SimBackend backend(profile);
  backend.scale_counter_noise(0.0);

  // With all sigmas collapsed the increments are exact.
  backend.victim_event("zz_block_b", 1);
  CHECK(backend.counter_value("INST_RETIRED.ANY") == 90000 + 135);

  CHECK_THROWS_AS(backend.scale_counter_noise(-0.5), Error);
}

TEST_CASE("hot page steers the page-walk events") {
  LeakageProfile profile = study_profile(16);
  for (auto& [name, model] : profile.counters)
    for (auto& [event, rule] : model.events) rule.noise_sigma = 0.0;
  SimBackend backend(profile);
  Harness harness(backend);
  backend.set_hot_page(0x7f0000400000);

  uint64_t before = backend.counter_value("DTLB_LOAD_MISSES.WALK_COMPLETED_2M_4M");
  harness.run_transient([&] { backend.transient_touch(0x7f0000400080); });
  uint64_t after_hit = backend.counter_value("DTLB_LOAD_MISSES.WALK_COMPLETED_2M_4M");
  CHECK(after_hit - before == 2);  // tlb_walk_hit

  harness.run_transient([&] { backend.transient_touch(0x7f0000600000); });
  uint64_t after_miss = backend.counter_value("DTLB_LOAD_MISSES.WALK_COMPLETED_2M_4M");
  CHECK(after_miss - after_hit == 12);  // tlb_walk_miss
}

TEST_CASE("virtual clock advances monotonically through channel work") {
  LeakageProfile profile = silent_profile(20);
  SimBackend backend(profile);
  uint64_t t0 = backend.cycles_now();
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(32);
  uint64_t t1 = backend.cycles_now();
  CHECK(t1 > t0);
  channel.flush_all();
  CHECK(backend.cycles_now() > t1);
}
