#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/normal.hpp>

#include "maskdiff/errors.hpp"

namespace maskdiff {

// Density, distribution and quantile functions of N(mean, stddev^2).
// Defaults are the log-SNR prior used by the EDM weighting.
struct Normal {
  double mean = 2.4;
  double stddev = 2.4;

  double pdf(double x) const {
    const double z = (x - mean) / stddev;
    return std::exp(-0.5 * z * z) / (stddev * std::sqrt(2.0 * std::numbers::pi));
  }

  double log_pdf(double x) const {
    const double z = (x - mean) / stddev;
    return -0.5 * z * z - std::log(stddev) - 0.5 * std::log(2.0 * std::numbers::pi);
  }

  double cdf(double x) const { return standard_cdf((x - mean) / stddev); }

  // Inverse CDF. Throws DomainError outside (0,1).
  double quantile(double p) const { return mean + stddev * standard_quantile(p); }

  static double standard_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

  static double standard_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile: p must lie in (0,1)");
    // lower tail keeps full relative precision; 1-p is exact for p >= 0.5
    const boost::math::normal_distribution<double> n;
    if (p > 0.5) return -boost::math::quantile(n, 1.0 - p);
    return boost::math::quantile(n, p);
  }
};

inline constexpr Normal kEdmPrior{2.4, 2.4};

}  // namespace maskdiff
