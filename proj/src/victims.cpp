#include "victims.hpp"

#include "errors.hpp"

namespace regleak {

SpectreGadget::SpectreGadget(std::vector<uint8_t> public_array, std::vector<uint8_t> secret,
                             Backend* backend)
    : storage_(std::move(public_array)), bound_(storage_.size()), backend_(backend) {
  if (bound_ == 0) raise(ErrorCode::InvalidArgument, "public array must not be empty");
  if (secret.empty()) raise(ErrorCode::InvalidArgument, "secret must not be empty");
  storage_.insert(storage_.end(), secret.begin(), secret.end());
}

void SpectreGadget::access(size_t index, unsigned bit) {
  if (bit > 7) raise(ErrorCode::InvalidArgument, "bit must be in 0..7");
  if (index < bound_) {
    if ((storage_[index] >> bit) & 1) {
      sink_ = div_num_ / div_den_;
      if (backend_) backend_->victim_event("div_exec", 1);
    }
    return;
  }
  // Mispredicted path: the transient load reads past the bound.  The model
  // only fires while the predictor is trained toward in-bounds.
  if (backend_ && backend_->speculation_armed() && index < storage_.size()) {
    backend_->consume_speculation();
    if ((storage_[index] >> bit) & 1) backend_->victim_speculative_event("div_exec", 1);
  }
}

SquareMultiplyVictim::SquareMultiplyVictim(BigInt base, BigInt modulus,
                                           std::vector<bool> exponent_msb_first, Backend* backend)
    : base_(std::move(base)),
      modulus_(std::move(modulus)),
      bits_(std::move(exponent_msb_first)),
      backend_(backend) {
  if (modulus_ <= 1) raise(ErrorCode::InvalidArgument, "modulus must exceed 1");
  if (bits_.empty()) raise(ErrorCode::InvalidArgument, "exponent must have at least one bit");
}

void SquareMultiplyVictim::step() {
  if (done()) raise(ErrorCode::InvalidArgument, "all exponent bits already processed");
  accumulator_ = (accumulator_ * accumulator_) % modulus_;
  if (backend_) backend_->victim_event("exp_square", 1);
  if (bits_[position_]) {
    accumulator_ = (accumulator_ * base_) % modulus_;
    if (backend_) backend_->victim_event("exp_multiply", 1);
  }
  ++position_;
}

BigInt SquareMultiplyVictim::result() const {
  if (!done()) raise(ErrorCode::InvalidArgument, "exponentiation is not finished");
  return accumulator_;
}

void SquareMultiplyVictim::reset() {
  accumulator_ = 1;
  position_ = 0;
}

int ZigzaggerVictim::block_a(int x) {
  if (backend_) backend_->victim_event("zz_block_a", 1);
  return x * 3 + 1;
}

int ZigzaggerVictim::block_b(int x) {
  if (backend_) backend_->victim_event("zz_block_b", 1);
  return x * x - 2;
}

int ZigzaggerVictim::block_c(int x) {
  if (backend_) backend_->victim_event("zz_block_c", 1);
  return (x << 2) ^ 5;
}

int ZigzaggerVictim::run_plain(int selector, int x) {
  if (selector < 0 || selector > 2) raise(ErrorCode::InvalidArgument, "selector must be in 0..2");
  if (selector == 0) return block_a(x);
  if (selector == 1) return block_b(x);
  return block_c(x);
}

int ZigzaggerVictim::run_hardened(int selector, int x) {
  if (selector < 0 || selector > 2) raise(ErrorCode::InvalidArgument, "selector must be in 0..2");
  using Fn = int (ZigzaggerVictim::*)(int);
  // One indirect dispatch for every path; the selection itself is a
  // conditional-move chain, never a conditional branch.
  Fn target = &ZigzaggerVictim::block_a;
  Fn candidate_b = &ZigzaggerVictim::block_b;
  Fn candidate_c = &ZigzaggerVictim::block_c;
  target = selector == 1 ? candidate_b : target;
  target = selector == 2 ? candidate_c : target;
  if (backend_) backend_->victim_event("zz_dispatch", 1);
  return (this->*target)(x);
}

}  // namespace regleak
