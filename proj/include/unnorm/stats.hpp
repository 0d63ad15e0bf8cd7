#pragma once

// Small summary statistics used by the samplers, the variance calculators and
// the replication harness.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "unnorm/linalg.hpp"
#include "unnorm/numeric.hpp"

namespace unnorm {

inline double sample_mean(std::span<const double> xs) { return compensated_mean(xs); }

/// Unbiased sample variance.
inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw std::invalid_argument("variance needs at least two values");
  const double mu = compensated_mean(xs);
  CompensatedSum acc;
  for (double x : xs) acc.add((x - mu) * (x - mu));
  return acc.value() / static_cast<double>(xs.size() - 1);
}

inline double sample_covariance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("covariance: bad sizes");
  const double ma = compensated_mean(a);
  const double mb = compensated_mean(b);
  CompensatedSum acc;
  for (size_t i = 0; i < a.size(); ++i) acc.add((a[i] - ma) * (b[i] - mb));
  return acc.value() / static_cast<double>(a.size() - 1);
}

/// Lag-0..max_lag autocovariances (biased, divided by N).
inline std::vector<double> autocovariances(std::span<const double> xs, size_t max_lag) {
  const size_t n = xs.size();
  if (n < 2) throw std::invalid_argument("autocovariances: series too short");
  max_lag = std::min(max_lag, n - 1);
  const double mu = compensated_mean(xs);
  std::vector<double> out(max_lag + 1);
  for (size_t k = 0; k <= max_lag; ++k) {
    CompensatedSum acc;
    for (size_t i = 0; i + k < n; ++i) acc.add((xs[i] - mu) * (xs[i + k] - mu));
    out[k] = acc.value() / static_cast<double>(n);
  }
  return out;
}

/// Standard error of the mean of a correlated series by non-overlapping batch
/// means.
inline double batch_means_se(std::span<const double> xs, size_t batches = 50) {
  const size_t len = xs.size() / batches;
  if (batches < 2 || len < 1) throw std::invalid_argument("batch_means_se: series too short");
  std::vector<double> means(batches);
  for (size_t b = 0; b < batches; ++b) means[b] = compensated_mean(xs.subspan(b * len, len));
  return std::sqrt(sample_variance(means) / static_cast<double>(batches));
}

/// Long-run covariance sum_{k in Z} Cov(phi(X_0), phi(X_k)) of a vector-valued
/// series (columns = time), truncated by Geyer's initial positive sequence
/// rule applied to the trace.
inline Mat initial_positive_sequence_covariance(const Mat& series) {
  const Eigen::Index n = series.cols();
  if (n < 4) throw std::invalid_argument("series too short for a long-run covariance");
  const Mat centered = series.colwise() - series.rowwise().mean();
  // Symmetrised lag-k autocovariance.
  auto gamma = [&](Eigen::Index k) -> Mat {
    const Mat c = centered.leftCols(n - k) * centered.rightCols(n - k).transpose() /
                  static_cast<double>(n);
    return symmetrized(c);
  };
  // sigma^2 = -gamma_0 + 2 sum_{i>=0} (gamma_{2i} + gamma_{2i+1}) while the
  // paired sums stay positive.
  Mat total = -gamma(0);
  for (Eigen::Index i = 0; 2 * i + 1 < n; ++i) {
    const Mat pair = gamma(2 * i) + gamma(2 * i + 1);
    if (pair.trace() <= 0.0) break;
    total += 2.0 * pair;
  }
  return symmetrized(total);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double half_width() const { return 0.5 * (hi - lo); }
};

/// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(size_t successes, size_t trials, double level = 0.95) {
  if (trials == 0) return {0.0, 1.0};
  const double z = normal_quantile(0.5 + 0.5 * level);
  const double nn = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / nn;
  const double denom = 1.0 + z * z / nn;
  const double centre = (p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Least-squares slope of y on x.
inline double ols_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("ols_slope: bad sizes");
  return sample_covariance(x, y) / sample_variance(x);
}

}  // namespace unnorm
