#include "classifier.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"

namespace regleak {

namespace {

double scaled_rate(uint64_t control_count, uint64_t control_rounds, uint64_t rounds) {
  if (control_rounds == 0) return 0.0;
  return static_cast<double>(control_count) * static_cast<double>(rounds) /
         static_cast<double>(control_rounds);
}

}  // namespace

uint64_t detection_threshold(double lambda, const ClassifierParams& params) {
  if (lambda <= 0.0) return params.min_confirm_hits;
  double term = std::exp(-lambda);
  double cdf = term;
  uint64_t t = 1;
  while (1.0 - cdf >= params.tail_epsilon && t < 100000) {
    term *= lambda / static_cast<double>(t);
    cdf += term;
    ++t;
  }
  return std::max(params.min_confirm_hits, t);
}

std::optional<unsigned> confirmed_value(const OffsetObservation& obs, const ControlStats& control,
                                        const ClassifierParams& params) {
  if (obs.rounds == 0) return std::nullopt;
  double lambda = scaled_rate(control.total_hits, control.rounds, obs.rounds) /
                  static_cast<double>(control.slot_count);
  uint64_t threshold = detection_threshold(lambda, params);

  std::optional<unsigned> candidate;
  for (const auto& [value, hits] : obs.value_hits) {
    if (hits < threshold) continue;
    if (value == 0) {
      double slot0_rate = scaled_rate(control.slot0_hits, control.rounds, obs.rounds);
      double bar = params.zero_margin * std::max({lambda, slot0_rate, 0.5});
      if (static_cast<double>(hits) < bar) continue;
    }
    if (candidate) return std::nullopt;  // two values above threshold: inconsistent
    candidate = value;
  }
  return candidate;
}

LeakVerdict classify(const std::vector<OffsetObservation>& offsets, const ControlStats& control,
                     const ClassifierParams& params) {
  if (offsets.empty()) raise(ErrorCode::InvalidArgument, "no offset observations");

  LeakVerdict verdict;
  verdict.rounds = offsets.front().rounds;

  uint64_t reconstructed = 0;
  uint64_t min_hits = UINT64_MAX;
  bool any_confirmed = false;
  bool any_nonzero = false;
  uint64_t activity = 0;

  for (const auto& obs : offsets) {
    for (const auto& [value, hits] : obs.value_hits) {
      (void)value;
      activity += hits;
    }
    activity += obs.discarded;

    std::optional<unsigned> byte = confirmed_value(obs, control, params);
    if (!byte) continue;
    any_confirmed = true;
    if (*byte != 0) {
      any_nonzero = true;
      reconstructed |= static_cast<uint64_t>(*byte) << obs.bit_offset;
    }
    min_hits = std::min(min_hits, obs.value_hits.at(*byte));
  }

  if (any_nonzero) {
    verdict.status = LeakStatus::Leaks;
    verdict.evidence.push_back({reconstructed, min_hits});
    return verdict;
  }
  if (any_confirmed) {
    verdict.status = LeakStatus::ZeroForward;
    verdict.evidence.push_back({0, min_hits});
    return verdict;
  }

  // No consistent value.  Significant activity against the all-offsets noise
  // budget still indicates the window executes and reaches the cache.  The
  // multiplicative margin absorbs estimation error in the control rate.
  uint64_t total_rounds = 0;
  for (const auto& obs : offsets) total_rounds += obs.rounds;
  double lambda_total = scaled_rate(control.total_hits, control.rounds, total_rounds);
  uint64_t activity_threshold = detection_threshold(lambda_total, params);
  if (activity >= activity_threshold &&
      static_cast<double>(activity) >= params.unverified_margin * lambda_total) {
    verdict.status = LeakStatus::Unverified;
    verdict.evidence.push_back({0, activity});
    return verdict;
  }

  verdict.status = LeakStatus::NoLeak;
  return verdict;
}

}  // namespace regleak
