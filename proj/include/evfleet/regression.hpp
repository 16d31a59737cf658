#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "error.hpp"

namespace evfleet {

struct RegressionFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;

  double predict(double x) const { return intercept + slope * x; }
  // x at which the fitted line reaches y.
  double solve_for(double y) const { return (y - intercept) / slope; }
};

// Ordinary least squares of y on x.
template <typename Range>
RegressionFit fit_ols(const Range& xs, const Range& ys) {
  const std::size_t n = std::size(xs);
  detail::require(n == std::size(ys), "fit_ols: x and y lengths differ");
  detail::require(n >= 2, "fit_ols: need at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  detail::require(sxx > 0, "fit_ols: x values are all equal");
  RegressionFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  fit.points = n;
  return fit;
}

// Slope of log(y) on log(x); every value must be positive.
inline RegressionFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
  std::vector<double> lx, ly;
  lx.reserve(xs.size());
  ly.reserve(ys.size());
  for (double x : xs) {
    detail::require(x > 0, "fit_loglog: non-positive x");
    lx.push_back(std::log(x));
  }
  for (double y : ys) {
    detail::require(y > 0, "fit_loglog: non-positive y");
    ly.push_back(std::log(y));
  }
  return fit_ols(lx, ly);
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= double(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.stderr_ = std::sqrt(ss / double(v.size() - 1) / double(v.size()));
  }
  return out;
}

}  // namespace evfleet
