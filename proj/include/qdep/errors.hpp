#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qdep {

//! Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! A column is constant, so its sample scale factor is zero.
class ZeroVariance : public Error
{
public:
  explicit ZeroVariance(std::size_t column)
    : Error("column " + std::to_string(column) +
            " has zero variance; the dependence measure is undefined")
    , column_(column)
  {
  }

  std::size_t column() const noexcept { return column_; }

private:
  std::size_t column_;
};

//! The gamma-chi-square null approximation is unusable (E1 <= 0 or V1 <= 0).
class DegenerateNull : public Error
{
public:
  using Error::Error;
};

class SampleTooSmall : public Error
{
public:
  using Error::Error;
};

//! The characteristic-function quadrature box cuts off too much weight.
class TruncationTooTight : public Error
{
public:
  using Error::Error;
};

//! Power bound requested with q_alpha == q.
class GapZero : public Error
{
public:
  using Error::Error;
};

//! Density-limit quadrature disagrees between grid resolutions.
class GridTooCoarse : public Error
{
public:
  using Error::Error;
};

class QuadratureError : public Error
{
public:
  using Error::Error;
};

//! Malformed input file (CSV, JSON fixture).
class ParseError : public Error
{
public:
  using Error::Error;
};

} // namespace qdep
