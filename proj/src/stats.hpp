#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace regleak {
namespace stats {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

// Median absolute deviation around `center`, not normal-consistency scaled.
inline double mad(const std::vector<double>& v, double center) {
  std::vector<double> dev;
  dev.reserve(v.size());
  for (double x : v) dev.push_back(std::fabs(x - center));
  return median(std::move(dev));
}

inline double mean(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
}

// Excess kurtosis; strongly negative for balanced bimodal data (a two-point
// mass reaches -2), near zero for a normal cloud.
inline double excess_kurtosis(const std::vector<double>& v) {
  if (v.size() < 4) return 0.0;
  double m = mean(v);
  double m2 = 0.0, m4 = 0.0;
  for (double x : v) {
    double d = x - m;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= static_cast<double>(v.size());
  m4 /= static_cast<double>(v.size());
  if (m2 == 0.0) return 0.0;
  return m4 / (m2 * m2) - 3.0;
}

struct TwoMeans {
  double low_center = 0.0;
  double high_center = 0.0;
  size_t low_count = 0;
  size_t high_count = 0;
};

// One-dimensional 2-means with deterministic min/max initialization.
inline TwoMeans two_means(const std::vector<double>& v) {
  TwoMeans result;
  if (v.empty()) return result;
  double lo = *std::min_element(v.begin(), v.end());
  double hi = *std::max_element(v.begin(), v.end());
  result.low_center = lo;
  result.high_center = hi;
  for (int iter = 0; iter < 64; ++iter) {
    double sum_lo = 0.0, sum_hi = 0.0;
    size_t n_lo = 0, n_hi = 0;
    double split = (result.low_center + result.high_center) / 2.0;
    for (double x : v) {
      if (x <= split) {
        sum_lo += x;
        ++n_lo;
      } else {
        sum_hi += x;
        ++n_hi;
      }
    }
    double new_lo = n_lo ? sum_lo / static_cast<double>(n_lo) : result.low_center;
    double new_hi = n_hi ? sum_hi / static_cast<double>(n_hi) : result.high_center;
    bool settled = new_lo == result.low_center && new_hi == result.high_center;
    result.low_center = new_lo;
    result.high_center = new_hi;
    result.low_count = n_lo;
    result.high_count = n_hi;
    if (settled) break;
  }
  return result;
}

}  // namespace stats
}  // namespace regleak
