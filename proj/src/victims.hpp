#pragma once

#include <cstdint>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "backend.hpp"

namespace regleak {

using BigInt = boost::multiprecision::cpp_int;

// Bounds-checked array access followed by a data-dependent division.  The
// secret lives inside the same allocation just past the logical bound, so a
// mispredicted bounds check reads it transiently.  Backend hooks mirror the
// division activity into modeled counters; on hardware they are no-ops and
// the divider itself is the signal.
class SpectreGadget {
 public:
  SpectreGadget(std::vector<uint8_t> public_array, std::vector<uint8_t> secret,
                Backend* backend);

  size_t array_size() const { return bound_; }
  size_t secret_size() const { return storage_.size() - bound_; }
  size_t secret_index(size_t k) const { return bound_ + k; }
  uint8_t secret_byte(size_t k) const { return storage_[secret_index(k)]; }
  uint8_t array_byte(size_t i) const { return storage_[i]; }

  void access(size_t index, unsigned bit);

 private:
  std::vector<uint8_t> storage_;
  size_t bound_;
  Backend* backend_;
  volatile uint64_t div_num_ = 0x1234567890ULL;
  volatile uint64_t div_den_ = 3;
  volatile uint64_t sink_ = 0;
};

// Left-to-right square-and-multiply modular exponentiation.  The multiply
// branch runs only for set exponent bits; every step emits events naming
// which operations retired.
class SquareMultiplyVictim {
 public:
  SquareMultiplyVictim(BigInt base, BigInt modulus, std::vector<bool> exponent_msb_first,
                       Backend* backend);

  size_t bit_count() const { return bits_.size(); }
  bool done() const { return position_ >= bits_.size(); }
  void step();
  BigInt result() const;
  void reset();

 private:
  BigInt base_;
  BigInt modulus_;
  std::vector<bool> bits_;
  Backend* backend_;
  BigInt accumulator_ = 1;
  size_t position_ = 0;
};

// Three-way secret-dependent dispatch in two variants: plain conditional
// branches, and a hardened variant that funnels every path through one
// branchless indirect dispatch so branch-granular probes see identical
// streams.  The per-path instruction counts still differ.
class ZigzaggerVictim {
 public:
  explicit ZigzaggerVictim(Backend* backend) : backend_(backend) {}

  int run_plain(int selector, int x);
  int run_hardened(int selector, int x);

 private:
  int block_a(int x);
  int block_b(int x);
  int block_c(int x);

  Backend* backend_;
};

}  // namespace regleak
