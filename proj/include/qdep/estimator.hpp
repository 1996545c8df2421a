#pragma once

#include "detail/summation.hpp"
#include "errors.hpp"
#include "kernels.hpp"
#include "sample.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qdep {

//! Value of the V-statistic estimator together with its three terms:
//! term1 = mean of the joint smoother at the sample points, term2 = product
//! over variables of the mean marginal smoother, term3 = mean of the product of
//! marginal smoothers. q_hat = (term1 + term2 - 2 term3) / 2.
struct QEstimate
{
  double q_hat = 0.0;
  double term1 = 0.0;
  double term2 = 0.0;
  double term3 = 0.0;
  std::size_t n = 0;
  KernelSpec kernel{ KernelFamily::gaussian, 1.0 };
  ScaleFactors sigma;
};

namespace detail {

//! Per-variable multipliers 1 / (sigma_k h) turning raw differences into K2
//! arguments.
inline std::vector<double>
inverse_scales(const KernelSpec& kernel, const ScaleFactors& sigma)
{
  std::vector<double> inv(sigma.sigma.size());
  for (std::size_t k = 0; k < inv.size(); ++k)
    inv[k] = 1.0 / (sigma.sigma[k] * kernel.bandwidth());
  return inv;
}

//! Row sums of the pairwise kernel matrices, collected in one symmetric pass.
//!
//! With a_k(n, m) = K2_h((Y_k(n) - Y_k(m)) / sigma_k):
//!   joint_row[n]  = sum_m prod_k a_k(n, m)
//!   row[k][n]     = sum_m a_k(n, m)
//!   square_sum[k] = sum_{n,m} a_k(n, m)^2
//! Diagonal terms n == m are included.
struct PairStatistics
{
  std::size_t n = 0;
  std::size_t k = 0;
  double k2_zero = 0.0;
  std::vector<double> joint_row;
  std::vector<std::vector<double>> row;
  std::vector<double> square_sum;
};

template<class Kern>
PairStatistics
pair_statistics_impl(const Sample& sample,
                     const KernelSpec& kernel,
                     const std::vector<double>& inv)
{
  const std::size_t n = sample.n();
  const std::size_t kk = sample.k();
  const double inv_h = 1.0 / kernel.bandwidth();

  PairStatistics st;
  st.n = n;
  st.k = kk;
  st.k2_zero = Kern::value(0.0) * inv_h;
  st.joint_row.assign(n, 0.0);
  st.row.assign(kk, std::vector<double>(n, 0.0));
  std::vector<CompensatedSum> squares(kk);

  const double diag_joint = std::pow(st.k2_zero, static_cast<double>(kk));
  std::vector<const double*> cols(kk);
  for (std::size_t k = 0; k < kk; ++k)
    cols[k] = sample.column(k).data();

  std::vector<double> a(kk);
  for (std::size_t i = 0; i < n; ++i) {
    double joint_i = diag_joint;
    for (std::size_t k = 0; k < kk; ++k) {
      st.row[k][i] += st.k2_zero;
      squares[k] += st.k2_zero * st.k2_zero;
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      double prod = 1.0;
      for (std::size_t k = 0; k < kk; ++k) {
        const double v = Kern::value((cols[k][i] - cols[k][j]) * inv[k]) * inv_h;
        a[k] = v;
        prod *= v;
      }
      joint_i += prod;
      st.joint_row[j] += prod;
      for (std::size_t k = 0; k < kk; ++k) {
        st.row[k][i] += a[k];
        st.row[k][j] += a[k];
        squares[k] += 2.0 * a[k] * a[k];
      }
    }
    st.joint_row[i] += joint_i;
  }

  st.square_sum.resize(kk);
  for (std::size_t k = 0; k < kk; ++k)
    st.square_sum[k] = squares[k].value();
  return st;
}

inline PairStatistics
pair_statistics(const Sample& sample,
                const KernelSpec& kernel,
                const ScaleFactors& sigma)
{
  check_compatible(sample, sigma);
  const auto inv = inverse_scales(kernel, sigma);
  return dispatch(kernel.family(), [&](auto k) {
    return pair_statistics_impl<decltype(k)>(sample, kernel, inv);
  });
}

//! The three estimator terms from precomputed row sums. Reduction order is
//! fixed (row index order), so the result does not depend on how the row
//! sums were produced.
inline QEstimate
terms_from_statistics(const PairStatistics& st)
{
  const double nn = static_cast<double>(st.n);
  QEstimate q;
  q.n = st.n;

  CompensatedSum t1;
  for (double v : st.joint_row)
    t1 += v;
  q.term1 = t1.value() / (nn * nn);

  q.term2 = 1.0;
  for (std::size_t k = 0; k < st.k; ++k) {
    CompensatedSum m;
    for (double v : st.row[k])
      m += v;
    q.term2 *= m.value() / (nn * nn);
  }

  CompensatedSum t3;
  for (std::size_t i = 0; i < st.n; ++i) {
    double p = 1.0;
    for (std::size_t k = 0; k < st.k; ++k)
      p *= st.row[k][i] / nn;
    t3 += p;
  }
  q.term3 = t3.value() / nn;

  q.q_hat = 0.5 * (q.term1 + q.term2 - 2.0 * q.term3);
  return q;
}

} // namespace detail

//! Joint smoother (1/N) sum_n prod_k K2_h((y_k - Y_k(n)) / sigma_k).
inline double
pi_hat_joint(const Sample& sample,
             const KernelSpec& kernel,
             const ScaleFactors& sigma,
             std::span<const double> y)
{
  check_compatible(sample, sigma);
  if (y.size() != sample.k())
    throw std::invalid_argument("evaluation point has the wrong dimension");
  detail::CompensatedSum s;
  for (std::size_t i = 0; i < sample.n(); ++i) {
    double p = 1.0;
    for (std::size_t k = 0; k < sample.k(); ++k)
      p *= eval_k2(kernel, (y[k] - sample(i, k)) / sigma.sigma[k]);
    s += p;
  }
  return s.value() / static_cast<double>(sample.n());
}

//! Marginal smoother (1/N) sum_n K2_h((y - Y_k(n)) / sigma_k).
inline double
pi_hat_marginal(const Sample& sample,
                const KernelSpec& kernel,
                const ScaleFactors& sigma,
                std::size_t k,
                double y)
{
  detail::CompensatedSum s;
  for (double v : sample.column(k))
    s += eval_k2(kernel, (y - v) / sigma.sigma[k]);
  return s.value() / static_cast<double>(sample.n());
}

//! The O(K N^2) estimator. Memory beyond the input is O(K N).
inline QEstimate
estimate_q(const Sample& sample, const KernelSpec& kernel, const ScaleFactors& sigma)
{
  if (sample.n() < 2)
    throw SampleTooSmall("estimate_q needs N >= 2");
  auto q = detail::terms_from_statistics(detail::pair_statistics(sample, kernel, sigma));
  q.kernel = kernel;
  q.sigma = sigma;
  return q;
}

//! Estimator with scale factors taken from the sample standard deviations.
inline QEstimate
estimate_q(const Sample& sample, const KernelSpec& kernel)
{
  return estimate_q(sample, kernel, sample_scale_factors(sample));
}

struct QuadratureSettings
{
  //! Box half-width is where the weight drops below this fraction of its max.
  double tail_threshold = 1e-12;
  //! Upper bound on the allowed contribution from outside the box.
  double tail_tolerance = 1e-8;
  //! Refuse boxes wider than this (in standardized frequency units).
  double max_half_width = 1e4;
};

namespace detail {

//! Smallest T such that psi(t) < threshold * max psi for every |t| >= T, for
//! the unscaled transform of the family (all three are even and eventually
//! decreasing).
inline double
fourier_cutoff(KernelFamily family, double threshold)
{
  const KernelSpec unit(family, 1.0);
  double peak = 0.0;
  for (double t = 0.0; t <= 50.0; t += 1e-3)
    peak = std::max(peak, eval_fourier(unit, t));
  double last_above = 0.0;
  for (double t = 0.0; t <= 400.0; t += 1e-2)
    if (eval_fourier(unit, t) >= threshold * peak)
      last_above = t;
  return last_above + 1e-2;
}

} // namespace detail

//! Characteristic-function form of the estimator for K = 2:
//!
//!   q_hat = 1/2 (2 pi)^-2 int psi(h s1) psi(h s2)
//!           |phi_Z(s) - phi_Z1(s1) phi_Z2(s2)|^2 ds,   Z_k = Y_k / sigma_k,
//!
//! evaluated by composite Gauss-Legendre quadrature on a truncated box. Serves
//! as an independent check of the pairwise-kernel formula.
inline double
estimate_q_cf(const Sample& sample,
              const KernelSpec& kernel,
              const ScaleFactors& sigma,
              const QuadratureSettings& quad = {})
{
  if (sample.k() != 2)
    throw std::invalid_argument("estimate_q_cf supports K = 2 only");
  if (sample.n() > 64)
    throw std::invalid_argument("estimate_q_cf supports N <= 64 only");
  check_compatible(sample, sigma);

  const std::size_t n = sample.n();
  const double h = kernel.bandwidth();
  const double cutoff = detail::fourier_cutoff(kernel.family(), quad.tail_threshold);
  const double half_width = cutoff / h;
  if (half_width > quad.max_half_width)
    throw TruncationTooTight("quadrature box half-width " +
                             std::to_string(half_width) + " exceeds limit " +
                             std::to_string(quad.max_half_width));

  // Weight mass outside the box, per coordinate, against the total mass
  // int psi(h s) ds = 2 pi K2(0) / h. |D|^2 <= 4 bounds the integrand.
  const KernelSpec unit(kernel.family(), 1.0);
  const double tail = 2.0 *
                      boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                        [&](double t) { return eval_fourier(unit, t); },
                        cutoff,
                        cutoff + 200.0) /
                      h;
  const double total = 2.0 * std::numbers::pi * eval_k2(unit, 0.0) / h;
  const double outside = 0.5 / (4.0 * std::numbers::pi * std::numbers::pi) * 4.0 *
                         2.0 * tail * std::abs(total);
  if (outside > quad.tail_tolerance)
    throw TruncationTooTight("weight mass outside the quadrature box (" +
                             std::to_string(outside) + ") exceeds tolerance");

  using Rule = boost::math::quadrature::gauss<double, 20>;
  struct Grid
  {
    std::vector<double> s, w;
  };
  std::vector<std::vector<double>> z(2, std::vector<double>(n));
  Grid grid[2];
  for (std::size_t k = 0; k < 2; ++k) {
    const auto col = sample.column(k);
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    const double mid = 0.5 * (*lo + *hi);
    for (std::size_t i = 0; i < n; ++i)
      z[k][i] = (col[i] - mid) / sigma.sigma[k];
    const double range = (*hi - *lo) / sigma.sigma[k];
    double width = 2.0 / h;
    if (range > 0.0)
      width = std::min(width, 2.0 * std::numbers::pi / range);
    const auto panels = static_cast<std::size_t>(std::ceil(half_width / width));
    const double pw = half_width / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
      const double centre = (static_cast<double>(p) + 0.5) * pw;
      for (std::size_t side = 0; side < 2; ++side) {
        const double sign = side == 0 ? 1.0 : -1.0;
        // The rule stores non-negative abscissas of a symmetric rule.
        const auto& xs = Rule::abscissa();
        const auto& ws = Rule::weights();
        for (std::size_t j = 0; j < xs.size(); ++j) {
          for (double pm : { 1.0, -1.0 }) {
            if (xs[j] == 0.0 && pm < 0.0)
              continue;
            const double s = sign * (centre + pm * 0.5 * pw * xs[j]);
            grid[k].s.push_back(s);
            grid[k].w.push_back(0.5 * pw * ws[j] * eval_fourier_scaled(kernel, s));
          }
        }
      }
    }
  }

  // Empirical characteristic functions on the node grids.
  const std::size_t m1 = grid[0].s.size();
  const std::size_t m2 = grid[1].s.size();
  std::vector<double> c1(m1 * n), s1(m1 * n), c2(m2 * n), s2(m2 * n);
  std::vector<double> mc1(m1), ms1(m1), mc2(m2), ms2(m2);
  auto fill = [&](const Grid& g,
                  const std::vector<double>& zk,
                  std::vector<double>& c,
                  std::vector<double>& s,
                  std::vector<double>& mc,
                  std::vector<double>& ms) {
    for (std::size_t a = 0; a < g.s.size(); ++a) {
      double sc = 0.0, ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double arg = g.s[a] * zk[i];
        c[a * n + i] = std::cos(arg);
        s[a * n + i] = std::sin(arg);
        sc += c[a * n + i];
        ss += s[a * n + i];
      }
      mc[a] = sc / static_cast<double>(n);
      ms[a] = ss / static_cast<double>(n);
    }
  };
  fill(grid[0], z[0], c1, s1, mc1, ms1);
  fill(grid[1], z[1], c2, s2, mc2, ms2);

  const double inv_n = 1.0 / static_cast<double>(n);
  detail::CompensatedSum total_sum;
  for (std::size_t a = 0; a < m1; ++a) {
    const double* ca = &c1[a * n];
    const double* sa = &s1[a * n];
    double row = 0.0;
    for (std::size_t b = 0; b < m2; ++b) {
      const double* cb = &c2[b * n];
      const double* sb = &s2[b * n];
      double re = 0.0, im = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        re += ca[i] * cb[i] - sa[i] * sb[i];
        im += ca[i] * sb[i] + sa[i] * cb[i];
      }
      re *= inv_n;
      im *= inv_n;
      const double pre = mc1[a] * mc2[b] - ms1[a] * ms2[b];
      const double pim = mc1[a] * ms2[b] + ms1[a] * mc2[b];
      const double dr = re - pre;
      const double di = im - pim;
      row += grid[1].w[b] * (dr * dr + di * di);
    }
    total_sum += grid[0].w[a] * row;
  }
  return 0.5 * total_sum.value() / (4.0 * std::numbers::pi * std::numbers::pi);
}

//! Gradient of q_hat with respect to every observation Y_k(n), holding the
//! scale factors fixed. Returned column-major, N x K, like Sample.
inline std::vector<double>
q_gradient(const Sample& sample, const KernelSpec& kernel, const ScaleFactors& sigma)
{
  if (sample.n() < 2)
    throw SampleTooSmall("q_gradient needs N >= 2");
  check_compatible(sample, sigma);

  const std::size_t n = sample.n();
  const std::size_t kk = sample.k();
  const double nn = static_cast<double>(n);
  const auto st = detail::pair_statistics(sample, kernel, sigma);

  std::vector<double> mean_k(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    detail::CompensatedSum s;
    for (double v : st.row[k])
      s += v;
    mean_k[k] = s.value() / (nn * nn);
  }
  // R_{-k}(m) = prod_{l != k} r_l(m), with r_l(m) the marginal smoother.
  std::vector<std::vector<double>> r_minus(kk, std::vector<double>(n, 1.0));
  for (std::size_t k = 0; k < kk; ++k)
    for (std::size_t l = 0; l < kk; ++l)
      if (l != k)
        for (std::size_t m = 0; m < n; ++m)
          r_minus[k][m] *= st.row[l][m] / nn;

  std::vector<double> grad(n * kk, 0.0);
  std::vector<double> a(kk), d(kk);
  std::vector<double> s_joint(kk), s_deriv(kk), s_cross(kk);
  for (std::size_t p = 0; p < n; ++p) {
    std::fill(s_joint.begin(), s_joint.end(), 0.0);
    std::fill(s_deriv.begin(), s_deriv.end(), 0.0);
    std::fill(s_cross.begin(), s_cross.end(), 0.0);
    for (std::size_t m = 0; m < n; ++m) {
      for (std::size_t k = 0; k < kk; ++k) {
        const double u = (sample(p, k) - sample(m, k)) / sigma.sigma[k];
        a[k] = eval_k2(kernel, u);
        d[k] = eval_k2_derivative(kernel, u);
      }
      for (std::size_t k = 0; k < kk; ++k) {
        double others = 1.0;
        for (std::size_t l = 0; l < kk; ++l)
          if (l != k)
            others *= a[l];
        s_joint[k] += others * d[k];
        s_deriv[k] += d[k];
        s_cross[k] += r_minus[k][m] * d[k];
      }
    }
    for (std::size_t k = 0; k < kk; ++k) {
      double other_means = 1.0;
      for (std::size_t l = 0; l < kk; ++l)
        if (l != k)
          other_means *= mean_k[l];
      const double scale = 1.0 / (nn * nn * sigma.sigma[k]);
      const double d1 = 2.0 * scale * s_joint[k];
      const double d2 = other_means * 2.0 * scale * s_deriv[k];
      const double d3 = scale * (r_minus[k][p] * s_deriv[k] + s_cross[k]);
      grad[k * n + p] = 0.5 * (d1 + d2 - 2.0 * d3);
    }
  }
  return grad;
}

} // namespace qdep
