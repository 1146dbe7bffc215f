// Shared fixtures for the unit suites.
#pragma once

#include <string>

#include "sim_backend.hpp"

#ifndef RL_FIXTURES_DIR
#define RL_FIXTURES_DIR "tests/fixtures"
#endif

namespace test_support {

inline std::string fixture_path(const std::string& name) {
  return std::string(RL_FIXTURES_DIR) + "/" + name;
}

// Noiseless machine where every probe stays silent; the baseline most suites
// build on.
inline regleak::LeakageProfile silent_profile(uint64_t seed = 1) {
  regleak::LeakageProfile profile;
  profile.name = "test-silent";
  profile.cpu_model = "Test CPU";
  profile.microcode = "0x1";
  profile.microarchitecture = "test";
  profile.spurious_hit_rate = 0.0;
  profile.seed = seed;
  return profile;
}

inline regleak::LeakageProfile leaky_profile(const std::string& probe, uint64_t value,
                                             uint64_t seed = 1) {
  regleak::LeakageProfile profile = silent_profile(seed);
  profile.name = "test-leaky";
  profile.probes[probe] = {regleak::ProbeBehaviorKind::LeakValue, value};
  return profile;
}

// Counter models matching the study fixtures: a division port counter, a page
// walk counter, a taken-branch counter and an instruction counter.
inline regleak::LeakageProfile study_profile(uint64_t seed = 1) {
  regleak::LeakageProfile profile = silent_profile(seed);
  profile.name = "test-studies";

  regleak::CounterModel div;
  div.counter_index = 0;
  div.initial = 1000;
  div.self_increment = 3;
  div.events["div_exec"] = {40, 2.0};
  profile.counters["CYCLES_DIV_BUSY.ALL"] = div;

  regleak::CounterModel walks;
  walks.counter_index = 1;
  walks.initial = 500;
  walks.self_increment = 1;
  walks.events["tlb_walk_hit"] = {2, 0.75};
  walks.events["tlb_walk_miss"] = {12, 0.75};
  profile.counters["DTLB_LOAD_MISSES.WALK_COMPLETED_2M_4M"] = walks;

  regleak::CounterModel branches;
  branches.counter_index = 2;
  branches.initial = 4000;
  branches.self_increment = 25;
  branches.events["exp_square"] = {16, 4.0};
  branches.events["exp_multiply"] = {18, 4.0};
  profile.counters["BR_INST_RETIRED.NEAR_TAKEN"] = branches;

  regleak::CounterModel instructions;
  instructions.counter_index = 3;
  instructions.initial = 90000;
  instructions.self_increment = 120;
  instructions.events["zz_dispatch"] = {20, 2.0};
  instructions.events["zz_block_a"] = {120, 3.0};
  instructions.events["zz_block_b"] = {135, 3.0};
  instructions.events["zz_block_c"] = {150, 3.0};
  profile.counters["INST_RETIRED.ANY"] = instructions;

  return profile;
}

}  // namespace test_support
