#pragma once

#include "detail/distinct_sums.hpp"
#include "detail/summation.hpp"
#include "errors.hpp"
#include "estimator.hpp"
#include "kernels.hpp"
#include "sample.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace qdep {

// ---------------------------------------------------------------------------
// U-statistic decomposition
// ---------------------------------------------------------------------------

//! The estimator terms split into U-statistics (distinct indices) plus
//! remainders:
//!   term1 = (N-1)/N            U1 + b1 / sqrt(N)
//!   term2 = N_(2K) / N^(2K)    U2 + b2 / sqrt(N)
//!   term3 = N_(K+1) / N^(K+1)  U3 + b3 / sqrt(N)
//! where N_(m) is the falling factorial. U1, U2, U3 are unbiased for the
//! three population terms, so (U1 + U2 - 2 U3) / 2 is an unbiased estimator of
//! the dependence measure.
struct UStatDecomposition
{
  double u1 = 0.0;
  double u2 = 0.0;
  double u3 = 0.0;
  double b1 = 0.0;
  double b2 = 0.0;
  double b3 = 0.0;
  double q_hat_reconstructed = 0.0;
  std::size_t n = 0;
  std::size_t k = 0;

  double q_unbiased() const { return 0.5 * (u1 + u2 - 2.0 * u3); }

  double coef1() const { return detail::falling_factorial(n, 2) / std::pow(double(n), 2.0); }
  double coef2() const
  {
    return detail::falling_factorial(n, 2 * k) / std::pow(double(n), double(2 * k));
  }
  double coef3() const
  {
    return detail::falling_factorial(n, k + 1) / std::pow(double(n), double(k + 1));
  }
};

namespace detail {

inline std::vector<SquareMatrix>
kernel_matrices(const Sample& sample, const KernelSpec& kernel, const ScaleFactors& sigma)
{
  check_compatible(sample, sigma);
  const std::size_t n = sample.n();
  const auto inv = inverse_scales(kernel, sigma);
  const double inv_h = 1.0 / kernel.bandwidth();
  std::vector<SquareMatrix> mats(sample.k(), SquareMatrix(n));
  dispatch(kernel.family(), [&](auto kern) {
    for (std::size_t k = 0; k < sample.k(); ++k) {
      const auto col = sample.column(k);
      auto& m = mats[k];
      for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = kern.value(0.0) * inv_h;
        for (std::size_t j = i + 1; j < n; ++j) {
          const double v = kern.value((col[i] - col[j]) * inv[k]) * inv_h;
          m(i, j) = v;
          m(j, i) = v;
        }
      }
    }
  });
  return mats;
}

} // namespace detail

//! Splits the estimator into U-statistics and remainder terms. Needs N >= 2K
//! and keeps K dense N x N kernel matrices in memory.
inline UStatDecomposition
ustat_decompose(const Sample& sample, const KernelSpec& kernel, const ScaleFactors& sigma)
{
  const std::size_t n = sample.n();
  const std::size_t kk = sample.k();
  if (n < 2 * kk)
    throw SampleTooSmall("U-statistic decomposition needs N >= 2K (N = " +
                         std::to_string(n) + ", K = " + std::to_string(kk) + ")");

  const auto mats = detail::kernel_matrices(sample, kernel, sigma);
  const auto v = estimate_q(sample, kernel, sigma);

  UStatDecomposition out;
  out.n = n;
  out.k = kk;

  detail::CompensatedSum off;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j)
        continue;
      double p = 1.0;
      for (std::size_t k = 0; k < kk; ++k)
        p *= mats[k](i, j);
      off += p;
    }
  out.u1 = off.value() / detail::falling_factorial(n, 2);

  // Slots 0..K-1 are i_1..i_K, slots K..2K-1 are j_1..j_K.
  std::vector<detail::SlotEdge> edges2;
  for (std::size_t k = 0; k < kk; ++k)
    edges2.push_back({ k, k, kk + k });
  out.u2 = detail::distinct_index_sum(mats, edges2, 2 * kk) /
           detail::falling_factorial(n, 2 * kk);

  // Slots 0..K-1 are i_1..i_K, slot K is the shared j.
  std::vector<detail::SlotEdge> edges3;
  for (std::size_t k = 0; k < kk; ++k)
    edges3.push_back({ k, k, kk });
  out.u3 = detail::distinct_index_sum(mats, edges3, kk + 1) /
           detail::falling_factorial(n, kk + 1);

  const double rn = std::sqrt(static_cast<double>(n));
  out.b1 = rn * (v.term1 - out.coef1() * out.u1);
  out.b2 = rn * (v.term2 - out.coef2() * out.u2);
  out.b3 = rn * (v.term3 - out.coef3() * out.u3);

  const double t1 = out.coef1() * out.u1 + out.b1 / rn;
  const double t2 = out.coef2() * out.u2 + out.b2 / rn;
  const double t3 = out.coef3() * out.u3 + out.b3 / rn;
  out.q_hat_reconstructed = 0.5 * (t1 + t2 - 2.0 * t3);
  return out;
}

// ---------------------------------------------------------------------------
// Variance under dependence
// ---------------------------------------------------------------------------

//! Plug-in estimates of the covariances Sigma_(ij) between the first-order
//! projections of the three U-statistics, and the resulting asymptotic
//! variance of sqrt(N) (q_hat - Q).
//!
//! With pi the joint smoother, pi_k the marginal smoothers, mu_k = E pi_k(Y_k)
//! and tilde_pi_l(y) = E[prod_{k != l} pi_k(Y_k) K2_h((Y_l - y) / sigma_l)],
//! the projections are
//!   phi1(y) = pi(y)
//!   phi2(y) = (1/K) sum_l pi_l(y_l) prod_{k != l} mu_k
//!   phi3(y) = (1/(K+1)) [prod_k pi_k(y_k) + sum_l tilde_pi_l(y_l)]
//! and Sigma_(ij) = cov(phi_i, phi_j). `combination` is
//!   4 S11 + 4K^2 S22 + 4(K+1)^2 S33 - 8(K+1) S13 - 8K(K+1) S23 + 8K S12,
//! the variance of 2 (q_hat - Q) sqrt(N); sigma_tilde is a quarter of it.
struct VarianceExpansion
{
  double sigma11 = 0.0;
  double sigma12 = 0.0;
  double sigma13 = 0.0;
  double sigma22 = 0.0;
  double sigma23 = 0.0;
  double sigma33 = 0.0;
  double theta1 = 0.0;
  double theta2 = 0.0;
  double theta3 = 0.0;
  double combination = 0.0;
  double sigma_tilde = 0.0;
  double var_leading = 0.0;
};

namespace detail {

//! Per-observation projection values phi1, phi2, phi3 (plug-in).
struct Projections
{
  std::vector<double> phi1, phi2, phi3;
  double theta1 = 0.0, theta2 = 0.0, theta3 = 0.0;
};

template<class Kern>
Projections
projections_impl(const Sample& sample, const KernelSpec& kernel, const ScaleFactors& sigma)
{
  const std::size_t n = sample.n();
  const std::size_t kk = sample.k();
  const double nn = static_cast<double>(n);
  const auto st = pair_statistics_impl<Kern>(sample, kernel, inverse_scales(kernel, sigma));
  const auto inv = inverse_scales(kernel, sigma);
  const double inv_h = 1.0 / kernel.bandwidth();

  std::vector<std::vector<double>> r(kk, std::vector<double>(n));
  std::vector<double> mu(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    CompensatedSum s;
    for (std::size_t i = 0; i < n; ++i) {
      r[k][i] = st.row[k][i] / nn;
      s += r[k][i];
    }
    mu[k] = s.value() / nn;
  }

  // R_{-l}(m) = prod_{k != l} r_k(m); tilde_pi_l(n) = mean_m R_{-l}(m) a_l(m, n).
  std::vector<std::vector<double>> r_minus(kk, std::vector<double>(n, 1.0));
  for (std::size_t l = 0; l < kk; ++l)
    for (std::size_t k = 0; k < kk; ++k)
      if (k != l)
        for (std::size_t m = 0; m < n; ++m)
          r_minus[l][m] *= r[k][m];

  std::vector<std::vector<double>> tilde(kk, std::vector<double>(n, 0.0));
  for (std::size_t l = 0; l < kk; ++l) {
    const auto col = sample.column(l);
    const double diag = Kern::value(0.0) * inv_h;
    for (std::size_t i = 0; i < n; ++i) {
      tilde[l][i] += r_minus[l][i] * diag;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double a = Kern::value((col[i] - col[j]) * inv[l]) * inv_h;
        tilde[l][i] += r_minus[l][j] * a;
        tilde[l][j] += r_minus[l][i] * a;
      }
    }
    for (auto& t : tilde[l])
      t /= nn;
  }

  Projections p;
  p.phi1.resize(n);
  p.phi2.resize(n);
  p.phi3.resize(n);
  double prod_mu = 1.0;
  for (double m : mu)
    prod_mu *= m;
  for (std::size_t i = 0; i < n; ++i) {
    p.phi1[i] = st.joint_row[i] / nn;
    double s2 = 0.0;
    for (std::size_t l = 0; l < kk; ++l) {
      double others = 1.0;
      for (std::size_t k = 0; k < kk; ++k)
        if (k != l)
          others *= mu[k];
      s2 += r[l][i] * others;
    }
    p.phi2[i] = s2 / static_cast<double>(kk);
    double prod_r = 1.0;
    for (std::size_t k = 0; k < kk; ++k)
      prod_r *= r[k][i];
    double s3 = prod_r;
    for (std::size_t l = 0; l < kk; ++l)
      s3 += tilde[l][i];
    p.phi3[i] = s3 / static_cast<double>(kk + 1);
  }

  CompensatedSum t1, t3;
  for (std::size_t i = 0; i < n; ++i) {
    t1 += p.phi1[i];
    double prod_r = 1.0;
    for (std::size_t k = 0; k < kk; ++k)
      prod_r *= r[k][i];
    t3 += prod_r;
  }
  p.theta1 = t1.value() / nn;
  p.theta2 = prod_mu;
  p.theta3 = t3.value() / nn;
  return p;
}

inline double
plug_in_covariance(const std::vector<double>& x, double mean_x,
                   const std::vector<double>& y, double mean_y)
{
  CompensatedSum s;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += (x[i] - mean_x) * (y[i] - mean_y);
  return s.value() / static_cast<double>(x.size());
}

} // namespace detail

inline VarianceExpansion
variance_expansion(const Sample& sample, const KernelSpec& kernel, const ScaleFactors& sigma)
{
  if (sample.n() < 2)
    throw SampleTooSmall("variance_expansion needs N >= 2");
  check_compatible(sample, sigma);
  const auto p = dispatch(kernel.family(), [&](auto k) {
    return detail::projections_impl<decltype(k)>(sample, kernel, sigma);
  });

  VarianceExpansion v;
  v.theta1 = p.theta1;
  v.theta2 = p.theta2;
  v.theta3 = p.theta3;
  using detail::plug_in_covariance;
  v.sigma11 = plug_in_covariance(p.phi1, p.theta1, p.phi1, p.theta1);
  v.sigma12 = plug_in_covariance(p.phi1, p.theta1, p.phi2, p.theta2);
  v.sigma13 = plug_in_covariance(p.phi1, p.theta1, p.phi3, p.theta3);
  v.sigma22 = plug_in_covariance(p.phi2, p.theta2, p.phi2, p.theta2);
  v.sigma23 = plug_in_covariance(p.phi2, p.theta2, p.phi3, p.theta3);
  v.sigma33 = plug_in_covariance(p.phi3, p.theta3, p.phi3, p.theta3);

  const double k = static_cast<double>(sample.k());
  v.combination = 4.0 * v.sigma11 + 4.0 * k * k * v.sigma22 +
                  4.0 * (k + 1.0) * (k + 1.0) * v.sigma33 -
                  8.0 * (k + 1.0) * v.sigma13 - 8.0 * k * (k + 1.0) * v.sigma23 +
                  8.0 * k * v.sigma12;
  v.sigma_tilde = 0.25 * v.combination;
  v.var_leading = v.sigma_tilde / static_cast<double>(sample.n());
  return v;
}

// ---------------------------------------------------------------------------
// Null law
// ---------------------------------------------------------------------------

//! Moments of the limit law of N q_hat under independence and the matching
//! scaled chi-square gamma * chi2(beta).
struct NullApprox
{
  double e1 = 0.0;
  double v1 = 0.0;
  double gamma = 0.0;
  double beta = 0.0;
};

enum class NullMomentForm
{
  //! Moments of the limit of N q_hat for the estimator as implemented.
  derived,
  //! The classical closed-form displays taken literally (uses int K2_h^2 and
  //! omits the 1/2 of the estimator). Kept for comparison only.
  as_printed
};

//! Plug-in marginal moments used by the null approximation.
struct MarginalMoments
{
  std::vector<double> mean_pi;      //!< E pi_k(Y_k)
  std::vector<double> mean_pi_sq;   //!< E pi_k(Y_k)^2
  std::vector<double> mean_k2_sq;   //!< E K2_h((Y_k - Y'_k) / sigma_k)^2
  double k2_zero = 0.0;             //!< K2_h(0)
};

inline MarginalMoments
marginal_moments(const detail::PairStatistics& st)
{
  const double nn = static_cast<double>(st.n);
  MarginalMoments m;
  m.k2_zero = st.k2_zero;
  for (std::size_t k = 0; k < st.k; ++k) {
    detail::CompensatedSum s, s2;
    for (double v : st.row[k]) {
      s += v / nn;
      s2 += (v / nn) * (v / nn);
    }
    m.mean_pi.push_back(s.value() / nn);
    m.mean_pi_sq.push_back(s2.value() / nn);
    m.mean_k2_sq.push_back(st.square_sum[k] / (nn * nn));
  }
  return m;
}

inline NullApprox
finish_null(double e1, double v1)
{
  if (!(e1 > 0.0) || !(v1 > 0.0) || !std::isfinite(e1) || !std::isfinite(v1))
    throw DegenerateNull("null approximation degenerate (E1 = " + std::to_string(e1) +
                         ", V1 = " + std::to_string(v1) +
                         "); use permutation calibration");
  return { e1, v1, v1 / (2.0 * e1), 2.0 * e1 * e1 / v1 };
}

//! Limit mean and variance of N q_hat under independence.
//!
//! Under independence N q_hat converges to (1/2) sum_j lambda_j Z_j^2 where
//! lambda_j are the eigenvalues of the kernel
//!   H(x, x') = sum_{S, T : |S|, |T| >= 2} prod_{k in S cap T} c_k(x, x')
//!              prod_{k in S \ T} e_k(x) prod_{k in T \ S} e_k(x')
//!              prod_{k outside S cup T} mu_k,
//! with c_k the doubly centred K2 kernel and e_k = pi_k - mu_k. Hence
//!   E1 = (1/2) [prod c0 - prod mu - sum_k (c0 - mu_k) prod_{l != k} mu_l]
//!   V1 = (1/2) sum_{S,T} prod_{S cap T} w_k prod_{S delta T} v_k prod_rest mu_k^2
//! where c0 = K2_h(0), v_k = var pi_k(Y_k), w_k = E c_k(Y, Y')^2.
inline NullApprox
null_moments_from(const MarginalMoments& m, const KernelSpec& kernel, NullMomentForm form)
{
  const std::size_t kk = m.mean_pi.size();
  const auto& mu = m.mean_pi;
  const auto& nu = m.mean_pi_sq;

  auto prod_except = [&](const std::vector<double>& x, std::size_t skip1,
                         std::size_t skip2) {
    double p = 1.0;
    for (std::size_t l = 0; l < kk; ++l)
      if (l != skip1 && l != skip2)
        p *= x[l];
    return p;
  };
  const std::size_t none = kk;
  std::vector<double> mu2(kk), nu2(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    mu2[k] = mu[k] * mu[k];
    nu2[k] = nu[k];
  }

  if (form == NullMomentForm::as_printed) {
    const double l2 = l2_norm_squared(kernel);
    double e1 = std::pow(l2, double(kk)) - prod_except(mu, none, none);
    for (std::size_t k = 0; k < kk; ++k)
      e1 -= (l2 - mu[k]) * prod_except(mu, k, none);

    double v1 = 2.0 * prod_except(mu2, none, none) - 4.0 * prod_except(nu, none, none) +
                4.0 * prod_except(mu, none, none);
    for (std::size_t k = 0; k < kk; ++k) {
      v1 += 2.0 * (mu[k] - mu2[k]) * prod_except(mu2, k, none);
      v1 -= 4.0 * (mu[k] - nu[k]) * prod_except(nu, k, none);
    }
    for (std::size_t k = 0; k < kk; ++k)
      for (std::size_t j = 0; j < kk; ++j) {
        if (j == k)
          continue;
        v1 += 2.0 *
              (mu2[k] * mu2[j] - 2.0 * nu[k] * mu2[j] + nu[k] * nu[j]) *
              prod_except(mu, k, j);
      }
    return finish_null(e1, v1);
  }

  const double c0 = m.k2_zero;
  double e_h = std::pow(c0, double(kk)) - prod_except(mu, none, none);
  for (std::size_t k = 0; k < kk; ++k)
    e_h -= (c0 - mu[k]) * prod_except(mu, k, none);

  // Sum over (S, T) by dynamic programming on (min(|S|, 2), min(|T|, 2)).
  std::array<std::array<double, 3>, 3> dp{};
  dp[0][0] = 1.0;
  for (std::size_t k = 0; k < kk; ++k) {
    const double v = nu[k] - mu2[k];
    const double w = m.mean_k2_sq[k] - 2.0 * nu[k] + mu2[k];
    std::array<std::array<double, 3>, 3> next{};
    for (int s = 0; s < 3; ++s)
      for (int t = 0; t < 3; ++t) {
        const double cur = dp[s][t];
        if (cur == 0.0)
          continue;
        const int s1 = std::min(s + 1, 2);
        const int t1 = std::min(t + 1, 2);
        next[s][t] += cur * mu2[k];
        next[s1][t] += cur * v;
        next[s][t1] += cur * v;
        next[s1][t1] += cur * w;
      }
    dp = next;
  }
  return finish_null(0.5 * e_h, 0.5 * dp[2][2]);
}

inline NullApprox
null_moments(const Sample& sample,
             const KernelSpec& kernel,
             const ScaleFactors& sigma,
             NullMomentForm form = NullMomentForm::derived)
{
  if (sample.n() < 2)
    throw SampleTooSmall("null_moments needs N >= 2");
  return null_moments_from(marginal_moments(detail::pair_statistics(sample, kernel, sigma)),
                           kernel, form);
}

//! gamma * chi2(beta), i.e. Gamma(shape beta / 2, scale 2 gamma).
class ScaledChiSquare
{
public:
  ScaledChiSquare(double gamma, double beta)
    : gamma_(gamma)
    , beta_(beta)
  {
    if (!(gamma > 0.0) || !(beta > 0.0))
      throw std::invalid_argument("scaled chi-square needs gamma, beta > 0");
  }
  explicit ScaledChiSquare(const NullApprox& n)
    : ScaledChiSquare(n.gamma, n.beta)
  {
  }

  double cdf(double x) const
  {
    if (x <= 0.0)
      return 0.0;
    return boost::math::gamma_p(0.5 * beta_, x / (2.0 * gamma_));
  }
  double survival(double x) const
  {
    if (x <= 0.0)
      return 1.0;
    return boost::math::gamma_q(0.5 * beta_, x / (2.0 * gamma_));
  }
  double quantile(double p) const
  {
    if (!(p > 0.0 && p < 1.0))
      throw std::invalid_argument("quantile probability must lie in (0, 1)");
    return 2.0 * gamma_ * boost::math::gamma_p_inv(0.5 * beta_, p);
  }
  double mean() const { return gamma_ * beta_; }
  double variance() const { return 2.0 * gamma_ * gamma_ * beta_; }

private:
  double gamma_;
  double beta_;
};

// ---------------------------------------------------------------------------
// Test of independence
// ---------------------------------------------------------------------------

enum class CalibrationKind
{
  gamma_chi_square,
  permutation
};

struct Calibration
{
  CalibrationKind kind = CalibrationKind::gamma_chi_square;
  std::size_t permutations = 999;
  std::uint64_t seed = 0;

  static Calibration gamma_chi_square() { return {}; }
  static Calibration permutation(std::size_t b, std::uint64_t seed)
  {
    return { CalibrationKind::permutation, b, seed };
  }
};

struct TestResult
{
  double q_hat = 0.0;
  double alpha = 0.05;
  double q_alpha = 0.0;
  bool reject = false;
  double p_value = 1.0;
  std::optional<double> power_lower_bound;
  QEstimate estimate;
  std::optional<NullApprox> null;
  Calibration calibration;
};

//! Level-alpha critical value of q_hat under gamma * chi2(beta) / N: the
//! smallest q with P(N q_hat > N q) <= alpha.
inline double
gamma_critical_value(const NullApprox& null, std::size_t n, double alpha)
{
  return ScaledChiSquare(null).quantile(1.0 - alpha) / static_cast<double>(n);
}

inline double
gamma_p_value(const NullApprox& null, std::size_t n, double q_hat)
{
  return ScaledChiSquare(null).survival(static_cast<double>(n) * q_hat);
}

namespace detail {

//! Recomputes q_hat for row-permuted copies of columns 1..K-1 from cached
//! kernel matrices (the per-column matrices and row sums are permutation
//! equivariant, so no kernel is re-evaluated).
class PermutationEngine
{
public:
  PermutationEngine(const Sample& sample, const KernelSpec& kernel, const ScaleFactors& sigma)
    : n_(sample.n())
    , k_(sample.k())
    , mats_(kernel_matrices(sample, kernel, sigma))
  {
    const double nn = static_cast<double>(n_);
    term2_ = 1.0;
    rows_.assign(k_, std::vector<double>(n_, 0.0));
    for (std::size_t k = 0; k < k_; ++k) {
      CompensatedSum total;
      for (std::size_t i = 0; i < n_; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n_; ++j)
          s += mats_[k](i, j);
        rows_[k][i] = s / nn;
        total += s;
      }
      term2_ *= total.value() / (nn * nn);
    }
    diag_ = 1.0;
    for (std::size_t k = 0; k < k_; ++k)
      diag_ *= mats_[k](0, 0);
  }

  //! perms[k] is the row permutation applied to column k (perms[0] ignored).
  double q_hat(const std::vector<std::vector<std::size_t>>& perms) const
  {
    const double nn = static_cast<double>(n_);
    std::vector<const double*> row_ptr(k_);
    CompensatedSum joint;
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t k = 0; k < k_; ++k) {
        const std::size_t pi = k == 0 ? i : perms[k][i];
        row_ptr[k] = &mats_[k].data[pi * n_];
      }
      double s = 0.0;
      for (std::size_t j = i + 1; j < n_; ++j) {
        double p = row_ptr[0][j];
        for (std::size_t k = 1; k < k_; ++k)
          p *= row_ptr[k][perms[k][j]];
        s += p;
      }
      joint += 2.0 * s;
    }
    joint += nn * diag_;
    CompensatedSum t3;
    for (std::size_t i = 0; i < n_; ++i) {
      double p = rows_[0][i];
      for (std::size_t k = 1; k < k_; ++k)
        p *= rows_[k][perms[k][i]];
      t3 += p;
    }
    const double term1 = joint.value() / (nn * nn);
    const double term3 = t3.value() / nn;
    return 0.5 * (term1 + term2_ - 2.0 * term3);
  }

private:
  std::size_t n_;
  std::size_t k_;
  std::vector<SquareMatrix> mats_;
  std::vector<std::vector<double>> rows_;
  double term2_ = 0.0;
  double diag_ = 0.0;
};

} // namespace detail

//! q_hat for B datasets in which every column but the first is independently
//! row-permuted. Deterministic in `seed`.
inline std::vector<double>
permutation_q_values(const Sample& sample,
                     const KernelSpec& kernel,
                     const ScaleFactors& sigma,
                     std::size_t permutations,
                     std::uint64_t seed)
{
  const std::size_t n = sample.n();
  const std::size_t kk = sample.k();
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> perms(kk, std::vector<std::size_t>(n));
  for (auto& p : perms)
    std::iota(p.begin(), p.end(), std::size_t{ 0 });

  std::vector<double> out;
  out.reserve(permutations);
  constexpr std::size_t matrix_budget = std::size_t{ 1 } << 24;
  if (kk * n * n <= matrix_budget) {
    const detail::PermutationEngine engine(sample, kernel, sigma);
    for (std::size_t b = 0; b < permutations; ++b) {
      for (std::size_t k = 1; k < kk; ++k)
        std::shuffle(perms[k].begin(), perms[k].end(), rng);
      out.push_back(engine.q_hat(perms));
    }
    return out;
  }
  std::vector<double> data(sample.column_major());
  for (std::size_t b = 0; b < permutations; ++b) {
    for (std::size_t k = 1; k < kk; ++k) {
      std::shuffle(perms[k].begin(), perms[k].end(), rng);
      const auto col = sample.column(k);
      for (std::size_t i = 0; i < n; ++i)
        data[k * n + i] = col[perms[k][i]];
    }
    out.push_back(estimate_q(Sample(n, kk, data), kernel, sigma).q_hat);
  }
  return out;
}

//! Critical value and p-value from permuted statistics. With the p-value
//! (1 + #{perm >= q}) / (B + 1), p <= alpha exactly when q exceeds the
//! (j+1)-th largest permuted value, j = floor(alpha (B + 1)) - 1.
inline std::pair<double, double>
permutation_decision(std::vector<double> permuted, double q_hat, double alpha)
{
  const std::size_t b = permuted.size();
  std::size_t at_least = 0;
  for (double v : permuted)
    if (v >= q_hat)
      ++at_least;
  const double p = (1.0 + static_cast<double>(at_least)) / (static_cast<double>(b) + 1.0);
  const auto allowed = static_cast<long long>(std::floor(alpha * (double(b) + 1.0))) - 1;
  double q_alpha = std::numeric_limits<double>::infinity();
  if (allowed >= 0 && static_cast<std::size_t>(allowed) < b) {
    std::sort(permuted.begin(), permuted.end());
    q_alpha = permuted[b - 1 - static_cast<std::size_t>(allowed)];
  }
  return { q_alpha, p };
}

inline TestResult
run_test(const Sample& sample,
         const KernelSpec& kernel,
         const ScaleFactors& sigma,
         double alpha,
         const Calibration& calibration = {})
{
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("alpha must lie in (0, 1)");
  if (sample.n() < 2)
    throw SampleTooSmall("the test needs N >= 2");

  const auto st = detail::pair_statistics(sample, kernel, sigma);
  TestResult r;
  r.alpha = alpha;
  r.calibration = calibration;
  r.estimate = detail::terms_from_statistics(st);
  r.estimate.kernel = kernel;
  r.estimate.sigma = sigma;
  r.q_hat = r.estimate.q_hat;

  if (calibration.kind == CalibrationKind::gamma_chi_square) {
    r.null = null_moments_from(marginal_moments(st), kernel, NullMomentForm::derived);
    r.q_alpha = gamma_critical_value(*r.null, sample.n(), alpha);
    r.p_value = gamma_p_value(*r.null, sample.n(), r.q_hat);
  } else {
    try {
      r.null = null_moments_from(marginal_moments(st), kernel, NullMomentForm::derived);
    } catch (const DegenerateNull&) {
      r.null.reset();
    }
    const auto [qa, p] = permutation_decision(
      permutation_q_values(sample, kernel, sigma, calibration.permutations, calibration.seed),
      r.q_hat, alpha);
    r.q_alpha = qa;
    r.p_value = p;
  }
  r.reject = r.q_hat > r.q_alpha;
  return r;
}

// ---------------------------------------------------------------------------
// Power
// ---------------------------------------------------------------------------

enum class PowerBoundForm
{
  //! 1 - var / |q_alpha - Q|, clamped to [0, 1]. A huge variance clamps to 0
  //! on either side of the critical value.
  as_printed,
  //! Chebyshev: 1 - var / (Q - q_alpha)^2 when Q > q_alpha, else 0.
  chebyshev
};

inline double
power_lower_bound(double q, double q_alpha, double var_qhat,
                  PowerBoundForm form = PowerBoundForm::as_printed)
{
  if (q_alpha == q)
    throw GapZero("power bound undefined when q_alpha equals Q");
  double bound = 0.0;
  if (form == PowerBoundForm::as_printed) {
    bound = 1.0 - var_qhat / std::abs(q_alpha - q);
  } else {
    if (q < q_alpha)
      return 0.0;
    const double gap = q - q_alpha;
    bound = 1.0 - var_qhat / (gap * gap);
  }
  return std::clamp(bound, 0.0, 1.0);
}

inline double
standard_normal_cdf(double x)
{
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

//! Normal approximation to the power, 1 - Phi((q_alpha - Q) sqrt(N) / sqrt(sigma_tilde)).
inline double
asymptotic_power(double q, double sigma_tilde, std::size_t n, double q_alpha)
{
  if (!(sigma_tilde > 0.0))
    throw std::invalid_argument("sigma_tilde must be positive");
  return 1.0 - standard_normal_cdf((q_alpha - q) * std::sqrt(static_cast<double>(n)) /
                                   std::sqrt(sigma_tilde));
}

} // namespace qdep
