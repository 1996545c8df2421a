#pragma once

#include "detail/summation.hpp"
#include "errors.hpp"
#include "kernels.hpp"
#include "sample.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace qdep {

//! Finite joint law: M atoms in R^K with probabilities.
class DiscreteJoint
{
public:
  DiscreteJoint(std::vector<std::vector<double>> atoms, std::vector<double> probs)
    : atoms_(std::move(atoms))
    , probs_(std::move(probs))
  {
    if (atoms_.empty())
      throw std::invalid_argument("discrete joint needs at least one atom");
    if (atoms_.size() != probs_.size())
      throw std::invalid_argument("atom and probability counts differ");
    k_ = atoms_.front().size();
    if (k_ < 2)
      throw std::invalid_argument("discrete joint needs at least two variables");
    detail::CompensatedSum total;
    for (std::size_t m = 0; m < atoms_.size(); ++m) {
      if (atoms_[m].size() != k_)
        throw std::invalid_argument("atom " + std::to_string(m) + " has the wrong dimension");
      for (double v : atoms_[m])
        if (!std::isfinite(v))
          throw std::invalid_argument("atom " + std::to_string(m) + " is not finite");
      if (!(probs_[m] >= 0.0))
        throw std::invalid_argument("probabilities must be nonnegative");
      total += probs_[m];
    }
    if (std::abs(total.value() - 1.0) > 1e-12)
      throw std::invalid_argument("probabilities must sum to 1");
    auto sorted = atoms_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("atoms must be distinct");
  }

  //! Joint law of independent variables with the given finite marginals.
  static DiscreteJoint product(const std::vector<std::vector<double>>& values,
                               const std::vector<std::vector<double>>& probs)
  {
    if (values.size() != probs.size())
      throw std::invalid_argument("marginal value and probability lists differ");
    std::vector<std::vector<double>> atoms{ {} };
    std::vector<double> p{ 1.0 };
    for (std::size_t k = 0; k < values.size(); ++k) {
      if (values[k].size() != probs[k].size())
        throw std::invalid_argument("marginal " + std::to_string(k) + " is malformed");
      std::vector<std::vector<double>> next_atoms;
      std::vector<double> next_p;
      for (std::size_t a = 0; a < atoms.size(); ++a)
        for (std::size_t j = 0; j < values[k].size(); ++j) {
          auto atom = atoms[a];
          atom.push_back(values[k][j]);
          next_atoms.push_back(std::move(atom));
          next_p.push_back(p[a] * probs[k][j]);
        }
      atoms = std::move(next_atoms);
      p = std::move(next_p);
    }
    return { std::move(atoms), std::move(p) };
  }

  std::size_t size() const noexcept { return atoms_.size(); }
  std::size_t k() const noexcept { return k_; }
  const std::vector<std::vector<double>>& atoms() const noexcept { return atoms_; }
  const std::vector<double>& probs() const noexcept { return probs_; }

  //! Distinct values of variable k (sorted) and their marginal probabilities.
  std::pair<std::vector<double>, std::vector<double>> marginal(std::size_t k) const
  {
    std::vector<double> values;
    for (const auto& a : atoms_)
      values.push_back(a[k]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    std::vector<double> p(values.size(), 0.0);
    for (std::size_t m = 0; m < atoms_.size(); ++m) {
      const auto pos = std::lower_bound(values.begin(), values.end(), atoms_[m][k]);
      p[static_cast<std::size_t>(pos - values.begin())] += probs_[m];
    }
    return { values, p };
  }

  //! The product of this law's marginals.
  DiscreteJoint product_of_marginals() const
  {
    std::vector<std::vector<double>> values, probs;
    for (std::size_t k = 0; k < k_; ++k) {
      auto [v, p] = marginal(k);
      values.push_back(std::move(v));
      probs.push_back(std::move(p));
    }
    return product(values, probs);
  }

  //! Probability of an atom, 0 if absent.
  double probability_of(const std::vector<double>& atom) const
  {
    for (std::size_t m = 0; m < atoms_.size(); ++m)
      if (atoms_[m] == atom)
        return probs_[m];
    return 0.0;
  }

  //! Total-variation distance to the product of the marginals.
  double tv_from_product() const
  {
    const auto prod = product_of_marginals();
    double tv = 0.0;
    for (std::size_t m = 0; m < prod.size(); ++m)
      tv += std::abs(prod.probs()[m] - probability_of(prod.atoms()[m]));
    for (std::size_t m = 0; m < atoms_.size(); ++m)
      if (prod.probability_of(atoms_[m]) == 0.0)
        tv += probs_[m];
    return 0.5 * tv;
  }

  //! Per-variable standard deviations of the law.
  std::vector<double> std_devs() const
  {
    std::vector<double> out(k_);
    for (std::size_t k = 0; k < k_; ++k) {
      double mean = 0.0;
      for (std::size_t m = 0; m < atoms_.size(); ++m)
        mean += probs_[m] * atoms_[m][k];
      double var = 0.0;
      for (std::size_t m = 0; m < atoms_.size(); ++m)
        var += probs_[m] * (atoms_[m][k] - mean) * (atoms_[m][k] - mean);
      out[k] = std::sqrt(var);
    }
    return out;
  }

private:
  std::vector<std::vector<double>> atoms_;
  std::vector<double> probs_;
  std::size_t k_ = 0;
};

//! Q for a finite joint law, from exact double sums over atoms (O(K M^2)).
inline double
exact_q_discrete(const DiscreteJoint& joint, const KernelSpec& kernel, const ScaleFactors& sigma)
{
  if (sigma.sigma.size() != joint.k())
    throw std::invalid_argument("scale factor count does not match K");
  const std::size_t m = joint.size();
  const std::size_t kk = joint.k();
  const auto& x = joint.atoms();
  const auto& p = joint.probs();

  // r[k][a] = pi_k at atom a; joint_sum = E pi(Y).
  std::vector<std::vector<double>> r(kk, std::vector<double>(m, 0.0));
  detail::CompensatedSum joint_sum;
  for (std::size_t a = 0; a < m; ++a) {
    detail::CompensatedSum pi_a;
    for (std::size_t b = 0; b < m; ++b) {
      double prod = 1.0;
      for (std::size_t k = 0; k < kk; ++k) {
        const double v = eval_k2(kernel, (x[a][k] - x[b][k]) / sigma.sigma[k]);
        r[k][a] += p[b] * v;
        prod *= v;
      }
      pi_a += p[b] * prod;
    }
    joint_sum += p[a] * pi_a.value();
  }
  double term2 = 1.0;
  for (std::size_t k = 0; k < kk; ++k) {
    detail::CompensatedSum s;
    for (std::size_t a = 0; a < m; ++a)
      s += p[a] * r[k][a];
    term2 *= s.value();
  }
  detail::CompensatedSum term3;
  for (std::size_t a = 0; a < m; ++a) {
    double prod = p[a];
    for (std::size_t k = 0; k < kk; ++k)
      prod *= r[k][a];
    term3 += prod;
  }
  return 0.5 * (joint_sum.value() + term2 - 2.0 * term3.value());
}

//! Q for a bivariate law given by probability weights on a tensor grid:
//! weights[i * ny + j] is the mass at (x[i], y[j]). O(G^3) via matrix
//! products.
inline double
exact_q_grid(const std::vector<double>& x,
             const std::vector<double>& y,
             const std::vector<double>& weights,
             const KernelSpec& kernel,
             const ScaleFactors& sigma)
{
  const std::size_t nx = x.size();
  const std::size_t ny = y.size();
  if (weights.size() != nx * ny)
    throw std::invalid_argument("grid weights do not match the grid");
  if (sigma.sigma.size() != 2)
    throw std::invalid_argument("exact_q_grid is bivariate");
  auto kernel_matrix = [&](const std::vector<double>& g, double s) {
    std::vector<double> a(g.size() * g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = 0; j < g.size(); ++j)
        a[i * g.size() + j] = eval_k2(kernel, (g[i] - g[j]) / s);
    return a;
  };
  const auto ax = kernel_matrix(x, sigma.sigma[0]);
  const auto ay = kernel_matrix(y, sigma.sigma[1]);

  std::vector<double> px(nx, 0.0), py(ny, 0.0);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) {
      px[i] += weights[i * ny + j];
      py[j] += weights[i * ny + j];
    }
  std::vector<double> rx(nx, 0.0), ry(ny, 0.0);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t l = 0; l < nx; ++l)
      rx[i] += ax[i * nx + l] * px[l];
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t l = 0; l < ny; ++l)
      ry[j] += ay[j * ny + l] * py[l];

  // term1 = sum_{i,i'} Ax(i,i') [W Ay W^T](i,i').
  std::vector<double> wa(nx * ny, 0.0);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t l = 0; l < ny; ++l) {
      const double w = weights[i * ny + l];
      if (w == 0.0)
        continue;
      for (std::size_t j = 0; j < ny; ++j)
        wa[i * ny + j] += w * ay[l * ny + j];
    }
  detail::CompensatedSum term1;
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t i2 = 0; i2 < nx; ++i2) {
      double inner = 0.0;
      for (std::size_t j = 0; j < ny; ++j)
        inner += wa[i * ny + j] * weights[i2 * ny + j];
      term1 += ax[i * nx + i2] * inner;
    }

  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < nx; ++i)
    mx += px[i] * rx[i];
  for (std::size_t j = 0; j < ny; ++j)
    my += py[j] * ry[j];
  detail::CompensatedSum term3;
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j)
      term3 += weights[i * ny + j] * rx[i] * ry[j];
  return 0.5 * (term1.value() + mx * my - 2.0 * term3.value());
}

namespace detail {

//! Determinant of a small dense matrix by partial-pivot elimination.
inline double
determinant(std::vector<double> a, std::size_t n)
{
  double det = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c]))
        piv = r;
    if (a[piv * n + c] == 0.0)
      return 0.0;
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j)
        std::swap(a[c * n + j], a[piv * n + j]);
      det = -det;
    }
    det *= a[c * n + c];
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      for (std::size_t j = c; j < n; ++j)
        a[r * n + j] -= f * a[c * n + j];
    }
  }
  return det;
}

} // namespace detail

//! Closed-form Q for the Gaussian kernel and a centred Gaussian vector with
//! covariance `cov` (row-major K x K). Uses E exp(-X' A X) = det(I + 2 A C)^(-1/2)
//! for X ~ N(0, C).
inline double
gaussian_q_exact(const std::vector<double>& cov, const KernelSpec& kernel, const ScaleFactors& sigma)
{
  if (kernel.family() != KernelFamily::gaussian)
    throw std::invalid_argument("gaussian_q_exact needs the gaussian kernel");
  const std::size_t kk = sigma.sigma.size();
  if (cov.size() != kk * kk)
    throw std::invalid_argument("covariance does not match the scale factors");
  const double h = kernel.bandwidth();
  std::vector<double> d(kk), c(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    d[k] = 1.0 / (sigma.sigma[k] * sigma.sigma[k] * h * h);
    c[k] = d[k] / (1.0 + 2.0 * d[k] * cov[k * kk + k]);
  }
  auto det_identity_plus = [&](const std::vector<double>& diag, double factor) {
    std::vector<double> m(kk * kk);
    for (std::size_t i = 0; i < kk; ++i)
      for (std::size_t j = 0; j < kk; ++j)
        m[i * kk + j] = (i == j ? 1.0 : 0.0) + factor * diag[i] * cov[i * kk + j];
    return detail::determinant(std::move(m), kk);
  };
  const double hk = std::pow(h, static_cast<double>(kk));
  const double term1 = 1.0 / (std::sqrt(det_identity_plus(d, 4.0)) * hk);
  double term2 = 1.0;
  double prefactor = 1.0;
  for (std::size_t k = 0; k < kk; ++k) {
    term2 *= 1.0 / (std::sqrt(1.0 + 4.0 * cov[k * kk + k] * d[k]) * h);
    prefactor *= 1.0 / (std::sqrt(1.0 + 2.0 * cov[k * kk + k] * d[k]) * h);
  }
  const double term3 = prefactor / std::sqrt(det_identity_plus(c, 2.0));
  return 0.5 * (term1 + term2 - 2.0 * term3);
}

//! A bivariate density with its marginals and a rectangular integration box.
struct DensityPair
{
  std::function<double(double, double)> joint_pdf;
  std::array<std::function<double(double)>, 2> marginal_pdfs;
  std::array<double, 2> lower{ -8.0, -8.0 };
  std::array<double, 2> upper{ 8.0, 8.0 };
  std::size_t grid = 400;
  //! Scale factors of the two variables; the limit is taken on Y / sigma.
  std::array<double, 2> sigma{ 1.0, 1.0 };

  //! Centred bivariate normal with unit variances and correlation rho.
  static DensityPair bivariate_normal(double rho)
  {
    if (!(std::abs(rho) < 1.0))
      throw std::invalid_argument("|rho| must be below 1");
    const double det = 1.0 - rho * rho;
    const double norm = 1.0 / (2.0 * std::numbers::pi * std::sqrt(det));
    DensityPair p;
    p.joint_pdf = [=](double x, double y) {
      return norm * std::exp(-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * det));
    };
    auto std_normal = [](double x) {
      return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    };
    p.marginal_pdfs = { std_normal, std_normal };
    return p;
  }
};

namespace detail {

struct TrapezoidResult
{
  double limit = 0.0;
  double mass = 0.0;
};

inline TrapezoidResult
trapezoid_limit(const DensityPair& pair, std::size_t cells)
{
  const double hx = (pair.upper[0] - pair.lower[0]) / static_cast<double>(cells);
  const double hy = (pair.upper[1] - pair.lower[1]) / static_cast<double>(cells);
  const double s0 = pair.sigma[0];
  const double s1 = pair.sigma[1];
  std::vector<double> m1(cells + 1);
  for (std::size_t j = 0; j <= cells; ++j)
    m1[j] = s1 * pair.marginal_pdfs[1](s1 * (pair.lower[1] + hy * double(j)));
  CompensatedSum total;
  CompensatedSum mass;
  for (std::size_t i = 0; i <= cells; ++i) {
    const double z0 = pair.lower[0] + hx * double(i);
    const double m0 = s0 * pair.marginal_pdfs[0](s0 * z0);
    const double wi = (i == 0 || i == cells) ? 0.5 : 1.0;
    for (std::size_t j = 0; j <= cells; ++j) {
      const double z1 = pair.lower[1] + hy * double(j);
      const double wj = (j == 0 || j == cells) ? 0.5 : 1.0;
      const double joint = s0 * s1 * pair.joint_pdf(s0 * z0, s1 * z1);
      const double diff = joint - m0 * m1[j];
      total += wi * wj * diff * diff;
      mass += wi * wj * joint;
    }
  }
  return { 0.5 * total.value() * hx * hy, mass.value() * hx * hy };
}

} // namespace detail

//! Small-bandwidth limit (1/2) int (p_Z - p_Z1 p_Z2)^2 dz, with Z = Y / sigma
//! so that p_Z(z) = sigma_1 sigma_2 p_Y(sigma z). Q(h) / psi(0)^2 tends to this
//! value as h -> 0, psi(0) being the integral of K2.
//!
//! Trapezoid rule on the box at `grid` and 2 `grid` cells, combined by
//! Richardson extrapolation. The joint density must carry mass 1 within
//! 1e-3 on the box.
inline double
density_limit_q(const DensityPair& pair)
{
  if (pair.grid < 2)
    throw std::invalid_argument("grid needs at least two cells");
  const double coarse = detail::trapezoid_limit(pair, pair.grid).limit;
  const auto fine_result = detail::trapezoid_limit(pair, 2 * pair.grid);
  const double fine = fine_result.limit;
  const double extrapolated = fine + (fine - coarse) / 3.0;
  if (std::abs(fine - coarse) > 1e-4 * std::abs(extrapolated) + 1e-14)
    throw GridTooCoarse("density-limit quadrature changed by " +
                        std::to_string(std::abs(fine - coarse)) +
                        " between grid resolutions");
  if (std::abs(fine_result.mass - 1.0) > 1e-3)
    throw std::invalid_argument("joint density integrates to " +
                                std::to_string(fine_result.mass) + " over the box");
  return extrapolated;
}

//! Literal transcription of the estimator: every smoother value is recomputed
//! from scratch at every observation, with no shared row sums. Restricted to
//! N <= 256.
inline double
naive_q(const Sample& sample, const KernelSpec& kernel, const ScaleFactors& sigma)
{
  const std::size_t n = sample.n();
  const std::size_t kk = sample.k();
  if (n > 256)
    throw std::invalid_argument("naive_q is limited to N <= 256");
  check_compatible(sample, sigma);
  const double nn = static_cast<double>(n);

  auto pi_joint = [&](std::size_t at) {
    detail::CompensatedSum s;
    for (std::size_t m = 0; m < n; ++m) {
      double p = 1.0;
      for (std::size_t k = 0; k < kk; ++k)
        p *= eval_k2(kernel, (sample(at, k) - sample(m, k)) / sigma.sigma[k]);
      s += p;
    }
    return s.value() / nn;
  };
  auto pi_marginal = [&](std::size_t k, std::size_t at) {
    detail::CompensatedSum s;
    for (std::size_t m = 0; m < n; ++m)
      s += eval_k2(kernel, (sample(at, k) - sample(m, k)) / sigma.sigma[k]);
    return s.value() / nn;
  };

  detail::CompensatedSum t1;
  for (std::size_t i = 0; i < n; ++i)
    t1 += pi_joint(i);
  const double term1 = t1.value() / nn;

  double term2 = 1.0;
  for (std::size_t k = 0; k < kk; ++k) {
    detail::CompensatedSum s;
    for (std::size_t i = 0; i < n; ++i)
      s += pi_marginal(k, i);
    term2 *= s.value() / nn;
  }

  detail::CompensatedSum t3;
  for (std::size_t i = 0; i < n; ++i) {
    double p = 1.0;
    for (std::size_t k = 0; k < kk; ++k)
      p *= pi_marginal(k, i);
    t3 += p;
  }
  const double term3 = t3.value() / nn;
  return 0.5 * (term1 + term2 - 2.0 * term3);
}

} // namespace qdep
