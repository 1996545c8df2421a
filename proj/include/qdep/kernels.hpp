#pragma once

#include "errors.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qdep {

// The library never works with the base kernel K directly: the measure only
// depends on K2 = K * mirror(K), so each family below is a K2 together with
// its Fourier transform psi(t) = int K2(x) exp(itx) dx.
//
// Bandwidth convention: K2_h(u) = K2(u / h) / h, which is what convolving two
// copies of K_h(x) = K(x / h) / h produces. The transform of K2_h at t is
// psi(h t).

enum class KernelFamily
{
  gaussian,
  square_cauchy,
  neg_second_deriv_square_cauchy
};

inline constexpr std::array<KernelFamily, 3> all_kernel_families = {
  KernelFamily::gaussian,
  KernelFamily::square_cauchy,
  KernelFamily::neg_second_deriv_square_cauchy
};

namespace kernel {

//! K2(x) = exp(-x^2).
struct Gaussian
{
  static double value(double x) { return std::exp(-x * x); }
  static double derivative(double x) { return -2.0 * x * std::exp(-x * x); }
  static double fourier(double t)
  {
    return std::sqrt(std::numbers::pi) * std::exp(-0.25 * t * t);
  }
  static double l2_norm_squared() { return std::sqrt(std::numbers::pi / 2.0); }
};

//! K2(x) = 1 / (1 + x^2)^2.
struct SquareCauchy
{
  static double value(double x)
  {
    const double d = 1.0 + x * x;
    return 1.0 / (d * d);
  }
  static double derivative(double x)
  {
    const double d = 1.0 + x * x;
    return -4.0 * x / (d * d * d);
  }
  static double fourier(double t)
  {
    const double a = std::abs(t);
    return 0.5 * std::numbers::pi * (1.0 + a) * std::exp(-a);
  }
  static double l2_norm_squared() { return 5.0 * std::numbers::pi / 16.0; }
};

//! K2(x) = -(20 x^2 - 4) / (1 + x^2)^4, minus the second derivative of
//! SquareCauchy. Takes negative values; its transform vanishes at t = 0.
struct NegSecondDerivSquareCauchy
{
  static double value(double x)
  {
    const double x2 = x * x;
    const double d = 1.0 + x2;
    const double d2 = d * d;
    return (4.0 - 20.0 * x2) / (d2 * d2);
  }
  static double derivative(double x)
  {
    const double x2 = x * x;
    const double d = 1.0 + x2;
    const double d2 = d * d;
    return x * (120.0 * x2 - 72.0) / (d2 * d2 * d);
  }
  static double fourier(double t)
  {
    const double a = std::abs(t);
    return 0.5 * std::numbers::pi * t * t * (1.0 + a) * std::exp(-a);
  }
  static double l2_norm_squared() { return 81.0 * std::numbers::pi / 32.0; }
};

} // namespace kernel

//! Calls `f` with a default-constructed tag of the family's kernel type, so
//! hot loops are instantiated once per family instead of switching per pair.
template<class F>
decltype(auto)
dispatch(KernelFamily family, F&& f)
{
  switch (family) {
    case KernelFamily::gaussian:
      return f(kernel::Gaussian{});
    case KernelFamily::square_cauchy:
      return f(kernel::SquareCauchy{});
    case KernelFamily::neg_second_deriv_square_cauchy:
      return f(kernel::NegSecondDerivSquareCauchy{});
  }
  throw std::invalid_argument("unknown kernel family");
}

inline std::string_view
to_string(KernelFamily family)
{
  switch (family) {
    case KernelFamily::gaussian:
      return "gaussian";
    case KernelFamily::square_cauchy:
      return "cauchy2";
    case KernelFamily::neg_second_deriv_square_cauchy:
      return "cauchy2dd";
  }
  return "unknown";
}

inline KernelFamily
parse_kernel_family(std::string_view name)
{
  for (auto family : all_kernel_families)
    if (to_string(family) == name)
      return family;
  throw std::invalid_argument("unknown kernel '" + std::string(name) +
                              "' (expected gaussian, cauchy2 or cauchy2dd)");
}

//! One of the K2 families plus a positive bandwidth.
class KernelSpec
{
public:
  KernelSpec(KernelFamily family, double bandwidth)
    : family_(family)
    , bandwidth_(bandwidth)
  {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
      throw std::invalid_argument("h must be positive");
  }

  KernelFamily family() const noexcept { return family_; }
  double bandwidth() const noexcept { return bandwidth_; }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;

private:
  KernelFamily family_;
  double bandwidth_;
};

//! K2_h(x) = K2(x / h) / h.
inline double
eval_k2(const KernelSpec& spec, double x)
{
  const double h = spec.bandwidth();
  return dispatch(spec.family(), [&](auto k) { return k.value(x / h) / h; });
}

//! Transform of the unscaled K2 at t.
inline double
eval_fourier(const KernelSpec& spec, double t)
{
  return dispatch(spec.family(), [&](auto k) { return k.fourier(t); });
}

//! Transform of K2_h at t, i.e. psi(h t).
inline double
eval_fourier_scaled(const KernelSpec& spec, double t)
{
  return eval_fourier(spec, spec.bandwidth() * t);
}

//! d/dx K2_h(x) = K2'(x / h) / h^2.
inline double
eval_k2_derivative(const KernelSpec& spec, double x)
{
  const double h = spec.bandwidth();
  return dispatch(spec.family(),
                  [&](auto k) { return k.derivative(x / h) / (h * h); });
}

//! int K2_h(x)^2 dx = (1 / h) int K2(x)^2 dx. Closed forms; the unit tests
//! check each against adaptive quadrature.
inline double
l2_norm_squared(const KernelSpec& spec)
{
  return dispatch(spec.family(),
                  [&](auto k) { return k.l2_norm_squared(); }) /
         spec.bandwidth();
}

//! K2_h(0).
inline double
k2_at_zero(const KernelSpec& spec)
{
  return eval_k2(spec, 0.0);
}

} // namespace qdep
