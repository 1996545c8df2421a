#pragma once

#include "detail/summation.hpp"
#include "errors.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qdep {

//! N observations of K real variables, stored column by column.
class Sample
{
public:
  Sample(std::size_t n, std::size_t k, std::vector<double> column_major)
    : n_(n)
    , k_(k)
    , data_(std::move(column_major))
  {
    if (n < 1)
      throw std::invalid_argument("sample needs at least one observation");
    if (k < 2)
      throw std::invalid_argument("sample needs at least two variables");
    if (data_.size() != n * k)
      throw std::invalid_argument("sample data size does not match N x K");
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (!std::isfinite(data_[i]))
        throw std::invalid_argument("sample entry (" + std::to_string(i % n) +
                                    ", " + std::to_string(i / n) +
                                    ") is not finite");
  }

  static Sample from_columns(const std::vector<std::vector<double>>& columns)
  {
    if (columns.empty())
      throw std::invalid_argument("sample needs at least two variables");
    const std::size_t n = columns.front().size();
    std::vector<double> data;
    data.reserve(n * columns.size());
    for (const auto& c : columns) {
      if (c.size() != n)
        throw std::invalid_argument("columns have different lengths");
      data.insert(data.end(), c.begin(), c.end());
    }
    return Sample(n, columns.size(), std::move(data));
  }

  static Sample from_rows(const std::vector<std::vector<double>>& rows)
  {
    if (rows.empty())
      throw std::invalid_argument("sample needs at least one observation");
    const std::size_t n = rows.size();
    const std::size_t k = rows.front().size();
    std::vector<double> data(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].size() != k)
        throw std::invalid_argument("row " + std::to_string(i) +
                                    " has the wrong number of fields");
      for (std::size_t j = 0; j < k; ++j)
        data[j * n + i] = rows[i][j];
    }
    return Sample(n, k, std::move(data));
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t k() const noexcept { return k_; }

  std::span<const double> column(std::size_t k) const
  {
    return { data_.data() + k * n_, n_ };
  }

  double operator()(std::size_t row, std::size_t col) const
  {
    return data_[col * n_ + row];
  }

  std::vector<double> row(std::size_t i) const
  {
    std::vector<double> r(k_);
    for (std::size_t j = 0; j < k_; ++j)
      r[j] = (*this)(i, j);
    return r;
  }

  const std::vector<double>& column_major() const noexcept { return data_; }

  friend bool operator==(const Sample&, const Sample&) = default;

private:
  std::size_t n_;
  std::size_t k_;
  std::vector<double> data_;
};

enum class ScaleSource
{
  user_supplied,
  sample_std_dev
};

//! Per-variable positive scale factors sigma_k.
struct ScaleFactors
{
  std::vector<double> sigma;
  ScaleSource source = ScaleSource::user_supplied;

  static ScaleFactors user(std::vector<double> values)
  {
    for (double s : values)
      if (!(s > 0.0) || !std::isfinite(s))
        throw std::invalid_argument("scale factors must be positive");
    return { std::move(values), ScaleSource::user_supplied };
  }

  static ScaleFactors ones(std::size_t k) { return user(std::vector(k, 1.0)); }

  friend bool operator==(const ScaleFactors&, const ScaleFactors&) = default;
};

//! Population standard deviation (divisor N) of one column.
inline double
population_std_dev(std::span<const double> x)
{
  detail::CompensatedSum s;
  for (double v : x)
    s += v;
  const double mean = s.value() / static_cast<double>(x.size());
  detail::CompensatedSum ss;
  for (double v : x)
    ss += (v - mean) * (v - mean);
  return std::sqrt(ss.value() / static_cast<double>(x.size()));
}

//! Sample standard deviations per column; throws ZeroVariance on a constant
//! column.
inline ScaleFactors
sample_scale_factors(const Sample& sample)
{
  ScaleFactors out{ std::vector<double>(sample.k()), ScaleSource::sample_std_dev };
  for (std::size_t k = 0; k < sample.k(); ++k) {
    const double sd = population_std_dev(sample.column(k));
    if (!(sd > 0.0))
      throw ZeroVariance(k);
    out.sigma[k] = sd;
  }
  return out;
}

inline ScaleFactors
scale_factors(const Sample& sample,
              ScaleSource mode,
              const std::vector<double>& user_values = {})
{
  if (mode == ScaleSource::sample_std_dev)
    return sample_scale_factors(sample);
  if (user_values.size() != sample.k())
    throw std::invalid_argument("expected " + std::to_string(sample.k()) +
                                " user scale factors");
  return ScaleFactors::user(user_values);
}

inline void
check_compatible(const Sample& sample, const ScaleFactors& sigma)
{
  if (sigma.sigma.size() != sample.k())
    throw std::invalid_argument("scale factor count does not match K");
}

} // namespace qdep
