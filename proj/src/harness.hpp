#pragma once

#include <functional>
#include <memory>

#include "backend.hpp"
#include "types.hpp"

namespace regleak {

// Runs bodies that intentionally fault and recovers control afterwards.
// Exactly one harness may be active per process; the constructor claims the
// fault-handling machinery and the destructor releases it.
class Harness {
 public:
  explicit Harness(Backend& backend, FaultStrategy strategy = FaultStrategy::SignalHandler);
  ~Harness();

  Harness(const Harness&) = delete;
  Harness& operator=(const Harness&) = delete;

  Backend& backend() { return backend_; }
  FaultStrategy strategy() const { return strategy_; }

  // Executes `body`, recovering from SIGSEGV/SIGILL/SIGBUS raised at the
  // designated access.  Not reentrant.
  TransientOutcome run_transient(const std::function<void()>& body);

  // Architecturally executes the branch with valid input `rounds` times so
  // the predictor learns the in-bounds direction.
  void mistrain_inplace(const std::function<void()>& take_branch, int rounds);

  CountingTimer& counting_timer();  // created and started on first use
  bool timer_degraded();

  // True while a recovery window is armed on this thread.  Backends refuse
  // transient accesses when this is false.
  static bool window_armed();

 private:
  Backend& backend_;
  FaultStrategy strategy_;
  std::unique_ptr<CountingTimer> timer_;
  bool handlers_installed_ = false;
};

}  // namespace regleak
