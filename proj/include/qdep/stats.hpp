#pragma once

#include "detail/summation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace qdep::stats {

//! Mean, variance (divisor R - 1) and their Monte Carlo standard errors.
struct Moments
{
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
  double se_mean = 0.0;
  double se_variance = 0.0;
};

inline Moments
moments(const std::vector<double>& x)
{
  Moments m;
  m.count = x.size();
  if (x.empty())
    return m;
  detail::CompensatedSum s;
  for (double v : x)
    s += v;
  const double r = static_cast<double>(x.size());
  m.mean = s.value() / r;
  if (x.size() < 2)
    return m;
  detail::CompensatedSum s2, s4;
  for (double v : x) {
    const double d = (v - m.mean) * (v - m.mean);
    s2 += d;
    s4 += d * d;
  }
  m.variance = s2.value() / (r - 1.0);
  m.se_mean = std::sqrt(m.variance / r);
  const double m2 = s2.value() / r;
  const double m4 = s4.value() / r;
  m.se_variance = std::sqrt(std::max(0.0, m4 - m2 * m2) / r);
  return m;
}

//! Proportion with its binomial standard error.
inline std::pair<double, double>
proportion(std::size_t hits, std::size_t total)
{
  if (total == 0)
    return { 0.0, 0.0 };
  const double p = static_cast<double>(hits) / static_cast<double>(total);
  return { p, std::sqrt(p * (1.0 - p) / static_cast<double>(total)) };
}

//! Least-squares slope of y on x.
inline double
ols_slope(const std::vector<double>& x, const std::vector<double>& y)
{
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("ols_slope needs two or more paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

//! Kolmogorov-Smirnov distance between the empirical law of x and a CDF.
inline double
ks_distance(std::vector<double> x, const std::function<double(double)>& cdf)
{
  if (x.empty())
    throw std::invalid_argument("ks_distance needs data");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max(d, std::max(f - static_cast<double>(i) / n,
                             static_cast<double>(i + 1) / n - f));
  }
  return d;
}

//! Pairs (empirical quantile, model quantile) at probabilities (i + 0.5) / points.
inline std::vector<std::pair<double, double>>
qq_pairs(std::vector<double> x, const std::function<double(double)>& quantile, std::size_t points)
{
  std::sort(x.begin(), x.end());
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < points; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(points);
    const auto idx = std::min(x.size() - 1, static_cast<std::size_t>(p * double(x.size())));
    out.emplace_back(x[idx], quantile(p));
  }
  return out;
}

struct AndersonDarling
{
  double statistic = 0.0; //!< A*^2, with the small-sample correction
  bool reject_at_1pct = false;
};

//! Anderson-Darling test of normality with estimated mean and variance
//! (Stephens' case 3). The 1% critical value of the corrected statistic is 1.035.
inline AndersonDarling
anderson_darling_normal(std::vector<double> x)
{
  if (x.size() < 8)
    throw std::invalid_argument("Anderson-Darling needs at least 8 points");
  const auto m = moments(x);
  const double sd = std::sqrt(m.variance);
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  const double nn = static_cast<double>(n);
  // log Phi(z) and log(1 - Phi(z)) through erfc to keep the tails accurate.
  auto log_cdf = [](double z) { return std::log(0.5 * std::erfc(-z / std::sqrt(2.0))); };
  auto log_sf = [](double z) { return std::log(0.5 * std::erfc(z / std::sqrt(2.0))); };
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = (x[i] - m.mean) / sd;
    const double zr = (x[n - 1 - i] - m.mean) / sd;
    s += (2.0 * static_cast<double>(i) + 1.0) * (log_cdf(zi) + log_sf(zr));
  }
  const double a2 = -nn - s / nn;
  AndersonDarling out;
  out.statistic = a2 * (1.0 + 0.75 / nn + 2.25 / (nn * nn));
  out.reject_at_1pct = out.statistic > 1.035;
  return out;
}

} // namespace qdep::stats
