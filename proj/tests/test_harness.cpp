// Fault harness: window arming, recovery strategies, and the real signal
// path against a hardware backend.
#include <csignal>
#include <sys/mman.h>

#include "doctest.h"

#include "channel.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "hw_backend.hpp"
#include "probe_catalog.hpp"
#include "sim_backend.hpp"
#include "test_support.hpp"

using namespace regleak;
using test_support::silent_profile;

TEST_CASE("only one harness may be active per process") {
  SimBackend backend(silent_profile());
  Harness first(backend);
  CHECK_THROWS_AS(Harness{backend}, Error);
  // Releasing the first frees the claim.
}

TEST_CASE("the claim is released when construction fails") {
  SimBackend backend(silent_profile());
  // TransactionAbort is rejected in simulation; the failed constructor must
  // not leave the process claim behind.
  CHECK_THROWS_AS(Harness(backend, FaultStrategy::TransactionAbort), Error);
  Harness ok(backend);
}

TEST_CASE("strategies are gated on backend capabilities") {
  SimBackend backend(silent_profile());
  try {
    Harness h(backend, FaultStrategy::TransactionAbort);
    FAIL("expected Unsupported");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Unsupported);
  }
  // Speculative suppression is simulation-only and accepted here.
  Harness h(backend, FaultStrategy::SpeculativeSuppression);
  CHECK(h.strategy() == FaultStrategy::SpeculativeSuppression);
}

TEST_CASE("the window is armed exactly while the body runs") {
  SimBackend backend(silent_profile());
  Harness harness(backend);
  CHECK_FALSE(Harness::window_armed());
  bool armed_inside = false;
  harness.run_transient([&] { armed_inside = Harness::window_armed(); });
  CHECK(armed_inside);
  CHECK_FALSE(Harness::window_armed());
}

TEST_CASE("run_transient is not reentrant") {
  SimBackend backend(silent_profile());
  Harness harness(backend);
  harness.run_transient([&] {
    CHECK_THROWS_AS(harness.run_transient([] {}), Error);
  });
}

TEST_CASE("a simulated transient read reports its pending fault") {
  LeakageProfile profile = silent_profile();
  SimBackend backend(profile);
  Harness harness(backend);
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(64);

  const ProbeSpec* spec = find_probe("rdpmc");
  REQUIRE(spec != nullptr);
  TransientOutcome outcome =
      harness.run_transient([&] { backend.transient_read(*spec, 0, 0, channel); });
  CHECK(outcome.completed);
  CHECK(outcome.fault_signal == SIGSEGV);
}

TEST_CASE("speculative suppression hides the fault signal") {
  LeakageProfile profile = silent_profile();
  SimBackend backend(profile);
  Harness harness(backend, FaultStrategy::SpeculativeSuppression);
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(64);

  const ProbeSpec* spec = find_probe("rdpmc");
  TransientOutcome outcome =
      harness.run_transient([&] { backend.transient_read(*spec, 0, 0, channel); });
  CHECK(outcome.completed);
  // Suppressed windows never deliver a signal, so the cause reads unknown.
  CHECK(outcome.fault_signal == -1);
}

TEST_CASE("mistraining validates rounds and arms the predictor model") {
  SimBackend backend(silent_profile());
  Harness harness(backend);
  CHECK_THROWS_AS(harness.mistrain_inplace([] {}, 0), Error);

  int calls = 0;
  harness.mistrain_inplace([&] { ++calls; }, 6);
  CHECK(calls == 6);
  CHECK(backend.speculation_armed());
}

TEST_CASE("the counting timer is monotone and reports resolution") {
  SimBackend backend(silent_profile());
  Harness harness(backend);
  CountingTimer& timer = harness.counting_timer();
  CHECK(timer.resolution() > 0.0);
  CHECK_FALSE(harness.timer_degraded());

  uint64_t last = timer.read();
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(32);
  for (int i = 0; i < 100; ++i) {
    channel.flush_all();
    uint64_t now = timer.read();
    CHECK(now >= last);
    last = now;
  }
}

TEST_CASE("ten thousand faulting windows recover cleanly") {
  LeakageProfile profile = silent_profile();
  SimBackend backend(profile);
  Harness harness(backend);
  Channel channel = make_channel(backend, ChannelConfig{});
  channel.calibrate(64);

  const ProbeSpec* spec = find_probe("mov_cr");
  REQUIRE(spec != nullptr);
  int faults = 0;
  for (int i = 0; i < 10000; ++i) {
    TransientOutcome outcome =
        harness.run_transient([&] { backend.transient_read(*spec, 0, 0, channel); });
    if (outcome.fault_signal == SIGSEGV) ++faults;
  }
  CHECK(faults == 10000);
}

TEST_CASE("a real segfault inside the window is caught and survived") {
  if (!hardware_supported()) return;  // nothing to exercise on this host

  HwBackend backend;
  Harness harness(backend);

  void* page = mmap(nullptr, 4096, PROT_NONE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  REQUIRE(page != MAP_FAILED);

  volatile uint8_t sink = 0;
  TransientOutcome outcome = harness.run_transient([&] {
    sink = *static_cast<volatile uint8_t*>(page);  // faults: the page is PROT_NONE
  });
  CHECK(outcome.completed);
  CHECK(outcome.fault_signal == SIGSEGV);
  CHECK_FALSE(Harness::window_armed());

  // The harness is still serviceable afterwards.
  outcome = harness.run_transient([] {});
  CHECK(outcome.fault_signal == 0);

  munmap(page, 4096);
  (void)sink;
}

TEST_CASE("repeated real faults do not wear the handler out") {
  if (!hardware_supported()) return;

  HwBackend backend;
  Harness harness(backend);
  void* page = mmap(nullptr, 4096, PROT_NONE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  REQUIRE(page != MAP_FAILED);

  volatile uint8_t sink = 0;
  int recovered = 0;
  for (int i = 0; i < 1000; ++i) {
    TransientOutcome outcome = harness.run_transient(
        [&] { sink = *static_cast<volatile uint8_t*>(page); });
    if (outcome.fault_signal == SIGSEGV) ++recovered;
  }
  CHECK(recovered == 1000);
  munmap(page, 4096);
  (void)sink;
}
