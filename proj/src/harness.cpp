#include "harness.hpp"

#include <csetjmp>
#include <csignal>
#include <cstring>

#include <atomic>

#include "errors.hpp"

#if defined(__x86_64__)
#include <immintrin.h>
#endif

namespace regleak {

namespace {

std::atomic<bool> g_harness_claimed{false};

thread_local sigjmp_buf g_recovery_point;
thread_local volatile sig_atomic_t g_window_armed = 0;
thread_local volatile sig_atomic_t g_fault_signal = 0;

const int kFaultSignals[] = {SIGSEGV, SIGILL, SIGBUS};
struct sigaction g_saved_actions[3];

void fault_handler(int sig, siginfo_t*, void*) {
  if (!g_window_armed) {
    // Fault outside any armed window: restore the default disposition and
    // let the re-raised signal take the process down as it normally would.
    signal(sig, SIG_DFL);
    ::raise(sig);
    return;
  }
  g_window_armed = 0;
  g_fault_signal = sig;
  siglongjmp(g_recovery_point, 1);
}

void install_handlers() {
  struct sigaction sa;
  std::memset(&sa, 0, sizeof(sa));
  sa.sa_sigaction = fault_handler;
  sa.sa_flags = SA_SIGINFO;
  sigemptyset(&sa.sa_mask);
  for (int i = 0; i < 3; ++i) {
    if (sigaction(kFaultSignals[i], &sa, &g_saved_actions[i]) != 0)
      raise(ErrorCode::HarnessFailure, "failed to install fault handler");
  }
}

void restore_handlers() {
  for (int i = 0; i < 3; ++i) sigaction(kFaultSignals[i], &g_saved_actions[i], nullptr);
}

#if defined(__x86_64__)
__attribute__((target("rtm"))) TransientOutcome run_in_transaction(
    const std::function<void()>& body) {
  unsigned status = _xbegin();
  if (status == _XBEGIN_STARTED) {
    body();
    _xend();
    return {true, 0};
  }
  // The fault aborted the transaction; no signal was delivered, so the
  // faulting cause is unknowable from here.
  return {true, -1};
}
#endif

struct ArmedScope {
  ArmedScope() { g_window_armed = 1; }
  ~ArmedScope() { g_window_armed = 0; }
};

}  // namespace

Harness::Harness(Backend& backend, FaultStrategy strategy)
    : backend_(backend), strategy_(strategy) {
  bool expected = false;
  if (!g_harness_claimed.compare_exchange_strong(expected, true))
    raise(ErrorCode::HarnessFailure, "another harness is already active in this process");

  BackendCapabilities caps = backend_.capabilities();
  if (strategy == FaultStrategy::TransactionAbort && !caps.has_transactional_memory) {
    g_harness_claimed = false;
    raise(ErrorCode::Unsupported, "transactional memory is not available");
  }
  if (strategy == FaultStrategy::SpeculativeSuppression && !caps.is_simulation) {
    g_harness_claimed = false;
    raise(ErrorCode::Unsupported,
          "speculative suppression is not implemented for hardware probe bodies");
  }

  if (!caps.is_simulation) {
    try {
      install_handlers();
    } catch (...) {
      g_harness_claimed = false;
      throw;
    }
    handlers_installed_ = true;
  }
}

Harness::~Harness() {
  if (timer_) timer_->stop();
  if (handlers_installed_) restore_handlers();
  g_harness_claimed = false;
}

TransientOutcome Harness::run_transient(const std::function<void()>& body) {
  if (g_window_armed) raise(ErrorCode::HarnessFailure, "run_transient is not reentrant");

  if (backend_.capabilities().is_simulation) {
    {
      ArmedScope armed;
      body();
    }
    int sig = backend_.take_pending_fault();
    if (strategy_ == FaultStrategy::SpeculativeSuppression && sig != 0) sig = -1;
    return {true, sig};
  }

#if defined(__x86_64__)
  if (strategy_ == FaultStrategy::TransactionAbort) {
    ArmedScope armed;  // belt and braces: an abort outside the transaction still recovers
    if (sigsetjmp(g_recovery_point, 1) == 0) return run_in_transaction(body);
    return {true, g_fault_signal};
  }
#endif

  g_fault_signal = 0;
  if (sigsetjmp(g_recovery_point, 1) == 0) {
    ArmedScope armed;
    body();
    return {true, 0};
  }
  return {true, g_fault_signal};
}

void Harness::mistrain_inplace(const std::function<void()>& take_branch, int rounds) {
  if (rounds < 1) raise(ErrorCode::InvalidArgument, "mistraining needs at least one round");
  for (int i = 0; i < rounds; ++i) take_branch();
  backend_.notify_mistrain(rounds);
}

CountingTimer& Harness::counting_timer() {
  if (!timer_) {
    timer_ = backend_.make_counting_timer();
    timer_->start();
  }
  return *timer_;
}

bool Harness::timer_degraded() { return counting_timer().degraded(); }

bool Harness::window_armed() { return g_window_armed != 0; }

}  // namespace regleak
