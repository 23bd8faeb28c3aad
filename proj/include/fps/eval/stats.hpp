#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fps/common.hpp"

namespace fps::eval {

struct RegressionStats {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double bias = 0.0;      // mean(y - x)
  double loa_low = 0.0;   // bias - 1.96 sd
  double loa_high = 0.0;  // bias + 1.96 sd
};

/// OLS fit of y on x plus Bland-Altman agreement with population SD.
/// A constant y that the line fits exactly reports R^2 = 1.
inline RegressionStats regression_stats(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), ErrorKind::shape, "regression_stats: x and y differ in length");
  require(x.size() >= 3, ErrorKind::invalid_input, "regression_stats: need at least 3 pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(std::isfinite(x[i]) && std::isfinite(y[i]), ErrorKind::invalid_input,
            "regression_stats: non-finite pair at index " + std::to_string(i));
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  require(sxx > 0.0, ErrorKind::regression_undefined, "regression_stats: x has zero variance");
  RegressionStats r;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ss_res = 0, dsum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (r.intercept + r.slope * x[i]);
    ss_res += e * e;
    dsum += y[i] - x[i];
  }
  r.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  r.bias = dsum / n;
  double dvar = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = (y[i] - x[i]) - r.bias;
    dvar += e * e;
  }
  const double sd = std::sqrt(dvar / n);
  r.loa_low = r.bias - 1.96 * sd;
  r.loa_high = r.bias + 1.96 * sd;
  return r;
}

inline constexpr const char* kRegressionHeader = "id\tmap\tslope\tintercept\tr2\tbias\tloa_low\tloa_high";

/// Linear-interpolated percentile, p in [0, 100]: rank p/100 * (n-1).
inline double percentile(std::vector<double> v, double p) {
  require(!v.empty(), ErrorKind::invalid_input, "percentile: empty list");
  require(p >= 0.0 && p <= 100.0, ErrorKind::invalid_input, "percentile: p must lie in [0, 100]");
  for (double x : v) require(std::isfinite(x), ErrorKind::invalid_input, "percentile: non-finite value");
  std::sort(v.begin(), v.end());
  const double rank = p / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 50.0); }

}  // namespace fps::eval
