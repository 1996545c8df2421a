#pragma once

#include <cmath>

namespace qdep::detail {

//! Neumaier's variant of Kahan summation.
class CompensatedSum
{
public:
  void add(double x) noexcept
  {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      compensation_ += (sum_ - t) + x;
    else
      compensation_ += (x - t) + sum_;
    sum_ = t;
  }

  CompensatedSum& operator+=(double x) noexcept
  {
    add(x);
    return *this;
  }

  void merge(const CompensatedSum& other) noexcept
  {
    add(other.sum_);
    add(other.compensation_);
  }

  double value() const noexcept { return sum_ + compensation_; }

private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

} // namespace qdep::detail
