#include "channel.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "errors.hpp"

namespace regleak {

namespace {

constexpr int kProbeStride = 167;

uint64_t median_of(std::vector<uint64_t>& v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

Channel::Channel(ChannelConfig config, std::unique_ptr<ChannelMemory> memory)
    : config_(config), memory_(std::move(memory)) {
  if (config_.slot_count < 2) raise(ErrorCode::InvalidArgument, "slot_count must be at least 2");
  if (config_.symbol_count < 1 || config_.symbol_count > 4)
    raise(ErrorCode::InvalidArgument, "symbol_count must be in 1..4");
  if (!memory_) raise(ErrorCode::InvalidArgument, "channel memory is null");
  probe_step_ = std::gcd(kProbeStride, config_.slot_count) == 1 ? kProbeStride : 1;
}

uint64_t Channel::calibrate(int iterations) {
  if (iterations < 16) raise(ErrorCode::InvalidArgument, "calibration needs at least 16 iterations");

  std::vector<uint64_t> hot, cold;
  hot.reserve(iterations);
  cold.reserve(iterations);
  for (int i = 0; i < iterations; ++i) {
    memory_->touch_slot(0, 0);
    hot.push_back(memory_->time_slot(0, 0));
    memory_->flush_slot(0, 0);
    cold.push_back(memory_->time_slot(0, 0));
    memory_->flush_slot(0, 0);
  }

  uint64_t med_hot = median_of(hot);
  uint64_t med_cold = median_of(cold);
  if (med_hot >= med_cold)
    raise(ErrorCode::CalibrationFailed,
          "hit and miss latencies do not separate (hit median " + std::to_string(med_hot) +
              ", miss median " + std::to_string(med_cold) + ")");

  config_.threshold_cycles = (med_hot + med_cold) / 2;
  return config_.threshold_cycles;
}

void Channel::set_threshold(uint64_t cycles) {
  if (cycles == 0) raise(ErrorCode::InvalidArgument, "threshold must be positive");
  config_.threshold_cycles = cycles;
}

void Channel::encode(unsigned value, int symbol) {
  if (symbol < 0 || symbol >= config_.symbol_count)
    raise(ErrorCode::InvalidArgument, "symbol index out of range");
  if (value >= static_cast<unsigned>(config_.slot_count))
    raise(ErrorCode::InvalidArgument, "value exceeds slot count");
  memory_->touch_slot(symbol, static_cast<int>(value));
}

ChannelObservation Channel::decode(int symbol) {
  if (symbol < 0 || symbol >= config_.symbol_count)
    raise(ErrorCode::InvalidArgument, "symbol index out of range");
  if (!config_.calibrated()) raise(ErrorCode::InvalidArgument, "channel is not calibrated");

  ChannelObservation obs;
  obs.symbol_index = symbol;
  obs.per_slot_cycles.reserve(config_.slot_count);
  memory_->on_decode_pass(symbol);
  for (int i = 0; i < config_.slot_count; ++i) {
    int slot = static_cast<int>((static_cast<long long>(i) * probe_step_) % config_.slot_count);
    uint64_t cycles = memory_->time_slot(symbol, slot);
    ++probe_count_;
    memory_->flush_slot(symbol, slot);
    obs.per_slot_cycles.push_back({slot, cycles});
    if (cycles < config_.threshold_cycles) obs.hit_slots.push_back(slot);
  }
  std::sort(obs.hit_slots.begin(), obs.hit_slots.end());
  return obs;
}

void Channel::flush_all() {
  for (int symbol = 0; symbol < config_.symbol_count; ++symbol)
    for (int slot = 0; slot < config_.slot_count; ++slot) memory_->flush_slot(symbol, slot);
}

std::optional<unsigned> Channel::read_value(int symbol, int retries) {
  if (retries < 1) raise(ErrorCode::InvalidArgument, "retries must be positive");

  std::map<unsigned, int> votes;
  for (int attempt = 0; attempt < retries; ++attempt) {
    ChannelObservation obs = decode(symbol);
    if (obs.hit_slots.size() == 1) {
      unsigned value = static_cast<unsigned>(obs.hit_slots[0]);
      if (attempt == 0) return value;
      ++votes[value];
    }
  }
  if (votes.empty()) return std::nullopt;
  auto best = votes.begin();
  for (auto it = votes.begin(); it != votes.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

Channel make_channel(Backend& backend, ChannelConfig config) {
  return Channel(config, backend.make_channel_memory(config));
}

}  // namespace regleak
