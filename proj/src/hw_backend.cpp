#include "hw_backend.hpp"

#include <atomic>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <pthread.h>
#include <sched.h>
#include <sys/mman.h>
#include <sys/prctl.h>
#include <unistd.h>

#include "channel.hpp"
#include "errors.hpp"
#include "harness.hpp"

namespace regleak {

#if defined(__x86_64__)

bool hardware_supported() { return true; }

namespace {

struct DescStore {
  uint16_t limit;
  uint64_t base;
} __attribute__((packed));

int find_sibling(int cpu) {
  std::ifstream in("/sys/devices/system/cpu/cpu" + std::to_string(cpu) +
                   "/topology/thread_siblings_list");
  if (!in) return -1;
  std::string text;
  std::getline(in, text);
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    size_t dash = token.find('-');
    int lo, hi;
    try {
      if (dash == std::string::npos) {
        lo = hi = std::stoi(token);
      } else {
        lo = std::stoi(token.substr(0, dash));
        hi = std::stoi(token.substr(dash + 1));
      }
    } catch (...) {
      return -1;
    }
    for (int id = lo; id <= hi; ++id)
      if (id != cpu) return id;
  }
  return -1;
}

bool tsc_readable() {
  int state = 0;
  if (prctl(PR_GET_TSC, &state) != 0) return true;
  return state == PR_TSC_ENABLE;
}

uint64_t rdtsc_fenced() {
  uint64_t value;
  asm volatile(
      "mfence\n\t"
      "lfence\n\t"
      "rdtsc\n\t"
      "lfence\n\t"
      "shl $32, %%rdx\n\t"
      "or %%rdx, %%rax\n\t"
      : "=a"(value)
      :
      : "rdx", "memory");
  return value;
}

class HwCountingTimer : public CountingTimer {
 public:
  ~HwCountingTimer() override { stop(); }

  void start() override {
    if (running_.exchange(true)) return;
    int cpu = sched_getcpu();
    int sibling = cpu >= 0 ? find_sibling(cpu) : -1;
    degraded_ = sibling < 0;
    worker_ = std::thread([this, sibling] {
      if (sibling >= 0) {
        cpu_set_t set;
        CPU_ZERO(&set);
        CPU_SET(sibling, &set);
        pthread_setaffinity_np(pthread_self(), sizeof(set), &set);
      }
      while (running_.load(std::memory_order_relaxed))
        ticks_.fetch_add(1, std::memory_order_relaxed);
    });

    // Wait until the worker visibly advances, then calibrate ticks per
    // reference cycle.  Skipped when timestamp reads already trap.
    uint64_t t0 = ticks_.load(std::memory_order_relaxed);
    for (int spin = 0; spin < 100000000 && ticks_.load(std::memory_order_relaxed) == t0; ++spin) {
    }
    if (tsc_readable()) {
      uint64_t c0 = rdtsc_fenced();
      uint64_t k0 = ticks_.load(std::memory_order_relaxed);
      while (rdtsc_fenced() - c0 < 2000000) {
      }
      uint64_t c1 = rdtsc_fenced();
      uint64_t k1 = ticks_.load(std::memory_order_relaxed);
      resolution_ = static_cast<double>(k1 - k0) / static_cast<double>(c1 - c0);
    }
  }

  void stop() override {
    if (!running_.exchange(false)) return;
    if (worker_.joinable()) worker_.join();
  }

  uint64_t read() override { return ticks_.load(std::memory_order_relaxed); }
  double resolution() override { return resolution_; }
  bool degraded() override { return degraded_; }

 private:
  std::atomic<uint64_t> ticks_{0};
  std::atomic<bool> running_{false};
  std::thread worker_;
  bool degraded_ = true;
  double resolution_ = 0.0;
};

class HwChannelMemory : public ChannelMemory {
 public:
  HwChannelMemory(HwBackend& owner, const ChannelConfig& config)
      : owner_(owner), config_(config) {
    size_t bytes = config.buffer_bytes();
    void* mapping = mmap(nullptr, bytes, PROT_READ | PROT_WRITE,
                         MAP_PRIVATE | MAP_ANONYMOUS | MAP_POPULATE, -1, 0);
    if (mapping == MAP_FAILED) raise(ErrorCode::HarnessFailure, "channel buffer mmap failed");
    buffer_ = static_cast<uint8_t*>(mapping);
    bytes_ = bytes;
    std::memset(buffer_, 1, bytes_);
  }

  ~HwChannelMemory() override { munmap(buffer_, bytes_); }

  uintptr_t base() const { return reinterpret_cast<uintptr_t>(buffer_); }
  HwBackend& owner() const { return owner_; }

  void flush_slot(int symbol, int slot) override {
    asm volatile("clflush (%0)\n\tmfence" ::"r"(slot_address(symbol, slot)) : "memory");
  }

  void touch_slot(int symbol, int slot) override {
    (void)*reinterpret_cast<volatile uint8_t*>(slot_address(symbol, slot));
  }

  uint64_t time_slot(int symbol, int slot) override {
    return owner_.timed_load(reinterpret_cast<volatile uint8_t*>(slot_address(symbol, slot)));
  }

  void on_decode_pass(int) override {}

 private:
  uintptr_t slot_address(int symbol, int slot) const {
    return base() + static_cast<size_t>(symbol) * config_.region_bytes() +
           static_cast<size_t>(slot) * config_.stride_bytes;
  }

  HwBackend& owner_;
  ChannelConfig config_;
  uint8_t* buffer_ = nullptr;
  size_t bytes_ = 0;
};

std::string cpuinfo_field(const char* key) {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key, 0) != 0) continue;
    size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    size_t begin = line.find_first_not_of(" \t", colon + 1);
    if (begin == std::string::npos) return "";
    return line.substr(begin);
  }
  return "";
}

// The register read leaves the value in rax; everything after the faulting
// instruction runs transiently.  The encode blocks walk one lookup region
// per byte, fault-free and branch-free.
#define RL_ENC_PROLOGUE        \
  "mov %[buf], %%r9\n\t"       \
  "mov %[stride], %%r11\n\t"   \
  "mov %[region], %%r12\n\t"   \
  "mov %k[shift], %%ecx\n\t"

#define RL_ENC_SYM             \
  "mov %%rax, %%r8\n\t"        \
  "shr %%cl, %%r8\n\t"         \
  "movzbq %%r8b, %%r8\n\t"     \
  "imulq %%r11, %%r8\n\t"      \
  "movb (%%r9,%%r8,1), %%r10b\n\t" \
  "addq %%r12, %%r9\n\t"       \
  "addb $8, %%cl\n\t"

#define RL_ASM_TAIL                                                                       \
  :                                                                                       \
  : [buf] "r"(buf), [stride] "r"(stride), [region] "r"(region), [shift] "r"(shift),       \
    [op] "r"(op), [desc] "r"(&desc)                                                       \
  : "rax", "rcx", "rdx", "r8", "r9", "r10", "r11", "r12", "cc", "memory"

#define RL_EMIT(READ)                                                              \
  do {                                                                             \
    switch (symbols) {                                                             \
      case 1: asm volatile(READ RL_ENC_PROLOGUE RL_ENC_SYM RL_ASM_TAIL); break;    \
      case 2:                                                                      \
        asm volatile(READ RL_ENC_PROLOGUE RL_ENC_SYM RL_ENC_SYM RL_ASM_TAIL);      \
        break;                                                                     \
      case 3:                                                                      \
        asm volatile(READ RL_ENC_PROLOGUE RL_ENC_SYM RL_ENC_SYM RL_ENC_SYM         \
                         RL_ASM_TAIL);                                             \
        break;                                                                     \
      default:                                                                     \
        asm volatile(READ RL_ENC_PROLOGUE RL_ENC_SYM RL_ENC_SYM RL_ENC_SYM         \
                         RL_ENC_SYM RL_ASM_TAIL);                                  \
        break;                                                                     \
    }                                                                              \
  } while (0)

#define RL_READ_RDPMC "mov %k[op], %%ecx\n\t rdpmc\n\t shl $32, %%rdx\n\t or %%rdx, %%rax\n\t"
#define RL_READ_RDTSC "rdtsc\n\t shl $32, %%rdx\n\t or %%rdx, %%rax\n\t"
#define RL_READ_RDTSCP "rdtscp\n\t shl $32, %%rdx\n\t or %%rdx, %%rax\n\t"
#define RL_READ_RDMSR "mov %k[op], %%ecx\n\t rdmsr\n\t shl $32, %%rdx\n\t or %%rdx, %%rax\n\t"
#define RL_READ_RDFSBASE "rdfsbase %%rax\n\t"
#define RL_READ_RDGSBASE "rdgsbase %%rax\n\t"
#define RL_READ_STR "xor %%eax, %%eax\n\t str %%ax\n\t"
#define RL_READ_SLDT "xor %%eax, %%eax\n\t sldt %%ax\n\t"
#define RL_READ_SMSW "smsw %%rax\n\t"
#define RL_READ_SIDT "sidt (%[desc])\n\t mov 2(%[desc]), %%rax\n\t"
#define RL_READ_SGDT "sgdt (%[desc])\n\t mov 2(%[desc]), %%rax\n\t"

void emit_probe(const std::string& name, uint64_t op, uintptr_t buf, uint64_t stride,
                uint64_t region, uint64_t shift, int symbols) {
  DescStore desc{};
  if (name == "rdpmc") {
    RL_EMIT(RL_READ_RDPMC);
  } else if (name == "rdtsc") {
    RL_EMIT(RL_READ_RDTSC);
  } else if (name == "rdtscp") {
    RL_EMIT(RL_READ_RDTSCP);
  } else if (name == "rdmsr") {
    RL_EMIT(RL_READ_RDMSR);
  } else if (name == "rdfsbase") {
    RL_EMIT(RL_READ_RDFSBASE);
  } else if (name == "rdgsbase") {
    RL_EMIT(RL_READ_RDGSBASE);
  } else if (name == "str") {
    RL_EMIT(RL_READ_STR);
  } else if (name == "sldt") {
    RL_EMIT(RL_READ_SLDT);
  } else if (name == "smsw") {
    RL_EMIT(RL_READ_SMSW);
  } else if (name == "sidt") {
    RL_EMIT(RL_READ_SIDT);
  } else if (name == "sgdt") {
    RL_EMIT(RL_READ_SGDT);
  } else if (name == "mov_cr") {
    switch (op) {
      case 0: RL_EMIT("mov %%cr0, %%rax\n\t"); break;
      case 2: RL_EMIT("mov %%cr2, %%rax\n\t"); break;
      case 3: RL_EMIT("mov %%cr3, %%rax\n\t"); break;
      case 4: RL_EMIT("mov %%cr4, %%rax\n\t"); break;
      case 8: RL_EMIT("mov %%cr8, %%rax\n\t"); break;
      default: raise(ErrorCode::InvalidArgument, "unsupported control register operand");
    }
  } else if (name == "mov_dr") {
    switch (op) {
      case 0: RL_EMIT("mov %%db0, %%rax\n\t"); break;
      case 1: RL_EMIT("mov %%db1, %%rax\n\t"); break;
      case 2: RL_EMIT("mov %%db2, %%rax\n\t"); break;
      case 3: RL_EMIT("mov %%db3, %%rax\n\t"); break;
      case 6: RL_EMIT("mov %%db6, %%rax\n\t"); break;
      case 7: RL_EMIT("mov %%db7, %%rax\n\t"); break;
      default: raise(ErrorCode::InvalidArgument, "unsupported debug register operand");
    }
  } else {
    raise(ErrorCode::Unsupported, "no hardware body for probe " + name);
  }
}

#define RL_BARE_TAIL ::[op] "r"(op), [desc] "r"(&desc) : "rax", "rcx", "rdx", "memory"

// Architectural execution attempt: the read alone, no encode.  Faults when
// the environment restricts it, which the harness absorbs.
void emit_bare(const std::string& name, uint64_t op) {
  DescStore desc{};
  if (name == "rdpmc") {
    asm volatile(RL_READ_RDPMC RL_BARE_TAIL);
  } else if (name == "rdtsc") {
    asm volatile(RL_READ_RDTSC RL_BARE_TAIL);
  } else if (name == "rdtscp") {
    asm volatile(RL_READ_RDTSCP RL_BARE_TAIL);
  } else if (name == "rdmsr") {
    asm volatile(RL_READ_RDMSR RL_BARE_TAIL);
  } else if (name == "rdfsbase") {
    asm volatile(RL_READ_RDFSBASE RL_BARE_TAIL);
  } else if (name == "rdgsbase") {
    asm volatile(RL_READ_RDGSBASE RL_BARE_TAIL);
  } else if (name == "str") {
    asm volatile(RL_READ_STR RL_BARE_TAIL);
  } else if (name == "sldt") {
    asm volatile(RL_READ_SLDT RL_BARE_TAIL);
  } else if (name == "smsw") {
    asm volatile(RL_READ_SMSW RL_BARE_TAIL);
  } else if (name == "sidt") {
    asm volatile(RL_READ_SIDT RL_BARE_TAIL);
  } else if (name == "sgdt") {
    asm volatile(RL_READ_SGDT RL_BARE_TAIL);
  } else if (name == "mov_cr") {
    switch (op) {
      case 0: asm volatile("mov %%cr0, %%rax" ::: "rax"); break;
      case 2: asm volatile("mov %%cr2, %%rax" ::: "rax"); break;
      case 3: asm volatile("mov %%cr3, %%rax" ::: "rax"); break;
      case 4: asm volatile("mov %%cr4, %%rax" ::: "rax"); break;
      case 8: asm volatile("mov %%cr8, %%rax" ::: "rax"); break;
      default: raise(ErrorCode::InvalidArgument, "unsupported control register operand");
    }
  } else if (name == "mov_dr") {
    switch (op) {
      case 0: asm volatile("mov %%db0, %%rax" ::: "rax"); break;
      case 1: asm volatile("mov %%db1, %%rax" ::: "rax"); break;
      case 2: asm volatile("mov %%db2, %%rax" ::: "rax"); break;
      case 3: asm volatile("mov %%db3, %%rax" ::: "rax"); break;
      case 6: asm volatile("mov %%db6, %%rax" ::: "rax"); break;
      case 7: asm volatile("mov %%db7, %%rax" ::: "rax"); break;
      default: raise(ErrorCode::InvalidArgument, "unsupported debug register operand");
    }
  } else {
    raise(ErrorCode::Unsupported, "no hardware body for probe " + name);
  }
}

HwChannelMemory& hw_memory(Channel& channel, HwBackend& self) {
  auto* mem = dynamic_cast<HwChannelMemory*>(&channel.memory());
  if (!mem || &mem->owner() != &self)
    raise(ErrorCode::InvalidArgument, "channel does not belong to this backend");
  return *mem;
}

}  // namespace

HwBackend::HwBackend() = default;

BackendCapabilities HwBackend::capabilities() const {
  BackendCapabilities caps;
  caps.has_cycle_counter = !tsc_trapped_;
  caps.has_transactional_memory = __builtin_cpu_supports("rtm");
  int cpu = sched_getcpu();
  caps.has_sibling_threads = cpu >= 0 && find_sibling(cpu) >= 0;
  caps.is_simulation = false;
  return caps;
}

MachineIdentity HwBackend::identity() {
  return {cpuinfo_field("model name"), cpuinfo_field("microcode"), ""};
}

std::unique_ptr<ChannelMemory> HwBackend::make_channel_memory(const ChannelConfig& config) {
  if (config.stride_bytes != 1024 && config.stride_bytes != 2048 && config.stride_bytes != 4096)
    raise(ErrorCode::InvalidArgument, "hardware stride must be 1024, 2048 or 4096");
  return std::make_unique<HwChannelMemory>(*this, config);
}

std::unique_ptr<CountingTimer> HwBackend::make_counting_timer() {
  return std::make_unique<HwCountingTimer>();
}

uint64_t HwBackend::cycles_now() {
  if (tsc_trapped_) return tick_source_->read();
  return rdtsc_fenced();
}

uint64_t HwBackend::timed_load(const volatile uint8_t* address) {
  if (tsc_trapped_) {
    uint64_t t0 = tick_source_->read();
    (void)*address;
    uint64_t t1 = tick_source_->read();
    double cycles = static_cast<double>(t1 - t0) / tick_resolution_;
    return cycles < 1.0 ? 1 : static_cast<uint64_t>(cycles);
  }
  uint64_t start, end;
  asm volatile(
      "mfence\n\t"
      "lfence\n\t"
      "rdtsc\n\t"
      "lfence\n\t"
      "shl $32, %%rdx\n\t"
      "or %%rdx, %%rax\n\t"
      "mov %%rax, %[start]\n\t"
      "movb (%[ptr]), %%r8b\n\t"
      "rdtscp\n\t"
      "lfence\n\t"
      "shl $32, %%rdx\n\t"
      "or %%rdx, %%rax\n\t"
      "mov %%rax, %[end]\n\t"
      : [start] "=&r"(start), [end] "=r"(end)
      : [ptr] "r"(address)
      : "rax", "rcx", "rdx", "r8", "memory");
  return end - start;
}

void HwBackend::transient_read(const ProbeSpec& spec, uint64_t operand, int bit_offset,
                               Channel& channel) {
  if (!Harness::window_armed())
    raise(ErrorCode::UnrecoverableFault, "transient access outside an armed recovery window");
  if (bit_offset < 0 || bit_offset > 56)
    raise(ErrorCode::InvalidArgument, "bit offset must be in 0..56");
  HwChannelMemory& mem = hw_memory(channel, *this);
  emit_probe(spec.name, operand, mem.base(),
             static_cast<uint64_t>(channel.config().stride_bytes),
             channel.config().region_bytes(), static_cast<uint64_t>(bit_offset),
             channel.config().symbol_count);
}

void HwBackend::transient_counter_read(const CounterSelector& selector, Channel& channel) {
  if (!Harness::window_armed())
    raise(ErrorCode::UnrecoverableFault, "transient access outside an armed recovery window");
  HwChannelMemory& mem = hw_memory(channel, *this);
  emit_probe("rdpmc", selector.counter_index, mem.base(),
             static_cast<uint64_t>(channel.config().stride_bytes),
             channel.config().region_bytes(), 0, channel.config().symbol_count);
}

void HwBackend::transient_touch(uintptr_t address) {
  if (!Harness::window_armed())
    raise(ErrorCode::UnrecoverableFault, "transient access outside an armed recovery window");
  (void)*reinterpret_cast<volatile const uint8_t*>(address);
}

bool HwBackend::restriction_active(Harness& harness, const ProbeSpec& spec) {
  uint64_t operand = spec.operands.empty() ? 0 : spec.operands[0];
  TransientOutcome outcome =
      harness.run_transient([&] { emit_bare(spec.name, operand); });
  return outcome.fault_signal != 0;
}

bool HwBackend::counter_restricted(Harness& harness, const CounterSelector& selector) {
  TransientOutcome outcome =
      harness.run_transient([&] { emit_bare("rdpmc", selector.counter_index); });
  return outcome.fault_signal != 0;
}

void HwBackend::trap_timestamp_reads(CountingTimer& timer) {
  if (tsc_trapped_) return;
  // Calibrate tick resolution while the reference clock is still readable.
  uint64_t c0 = rdtsc_fenced();
  uint64_t k0 = timer.read();
  while (rdtsc_fenced() - c0 < 2000000) {
  }
  uint64_t c1 = rdtsc_fenced();
  uint64_t k1 = timer.read();
  tick_resolution_ = static_cast<double>(k1 - k0) / static_cast<double>(c1 - c0);
  if (tick_resolution_ <= 0.0)
    raise(ErrorCode::TimerUnavailable, "counting timer does not advance");
  tick_source_ = &timer;
  if (prctl(PR_SET_TSC, PR_TSC_SIGSEGV) != 0)
    raise(ErrorCode::HarnessFailure, "prctl(PR_SET_TSC) failed");
  tsc_trapped_ = true;
}

#else  // !__x86_64__

bool hardware_supported() { return false; }

namespace {
[[noreturn]] void unsupported() {
  raise(ErrorCode::Unsupported, "hardware backend requires x86-64");
}
}  // namespace

HwBackend::HwBackend() { unsupported(); }
BackendCapabilities HwBackend::capabilities() const { unsupported(); }
MachineIdentity HwBackend::identity() { unsupported(); }
std::unique_ptr<ChannelMemory> HwBackend::make_channel_memory(const ChannelConfig&) {
  unsupported();
}
std::unique_ptr<CountingTimer> HwBackend::make_counting_timer() { unsupported(); }
uint64_t HwBackend::cycles_now() { unsupported(); }
uint64_t HwBackend::timed_load(const volatile uint8_t*) { unsupported(); }
void HwBackend::transient_read(const ProbeSpec&, uint64_t, int, Channel&) { unsupported(); }
void HwBackend::transient_counter_read(const CounterSelector&, Channel&) { unsupported(); }
void HwBackend::transient_touch(uintptr_t) { unsupported(); }
bool HwBackend::restriction_active(Harness&, const ProbeSpec&) { unsupported(); }
bool HwBackend::counter_restricted(Harness&, const CounterSelector&) { unsupported(); }
void HwBackend::trap_timestamp_reads(CountingTimer&) { unsupported(); }

#endif

}  // namespace regleak
