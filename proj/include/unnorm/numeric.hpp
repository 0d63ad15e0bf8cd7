#pragma once

// Scalar numerics shared by the objectives and the samplers: compensated
// summation, log-space helpers and the standard normal distribution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>

#include <boost/math/special_functions/erf.hpp>

namespace unnorm {

/// Neumaier's variant of Kahan summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double compensated_sum(std::span<const double> xs) {
  CompensatedSum acc;
  for (double x : xs) acc.add(x);
  return acc.value();
}

inline double compensated_mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean of empty range");
  return compensated_sum(xs) / static_cast<double>(xs.size());
}

/// log(sum(exp(xs))), -inf for an empty range.
inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  CompensatedSum acc;
  for (double x : xs) acc.add(std::exp(x - mx));
  return mx + std::log(acc.value());
}

/// log(1 + e^t) without overflow.
inline double log1p_exp(double t) {
  if (t > 0.0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

/// Logistic function 1 / (1 + e^{-t}).
inline double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double normal_pdf(double t) {
  return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double t) {
  return 0.5 * boost::math::erfc(-t / std::numbers::sqrt2);
}

/// log Phi(t), accurate far into the lower tail.
inline double log_normal_cdf(double t) {
  if (t > -30.0) return std::log(normal_cdf(t));
  // Asymptotic series of the Mills ratio.
  const double t2 = t * t;
  return -0.5 * t2 - std::log(-t) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / t2 + 3.0 / (t2 * t2) - 15.0 / (t2 * t2 * t2));
}

/// phi(t) / Phi(t), the inverse Mills ratio of the lower tail.
inline double inverse_mills(double t) {
  return std::exp(-0.5 * t * t - 0.5 * std::log(2.0 * std::numbers::pi) -
                  log_normal_cdf(t));
}

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p outside (0,1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

}  // namespace unnorm
