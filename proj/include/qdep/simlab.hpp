#pragma once

#include "asymptotics.hpp"
#include "errors.hpp"
#include "estimator.hpp"
#include "kernels.hpp"
#include "oracle.hpp"
#include "sample.hpp"
#include "stats.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <type_traits>
#include <variant>
#include <vector>

namespace qdep {

namespace scenario {

//! Draws rows from a finite joint law.
struct DiscreteJointSampler
{
  DiscreteJoint joint;
};

//! Centred bivariate normal, unit variances, correlation rho.
struct BivariateGaussian
{
  double rho = 0.0;
};

//! Y1 ~ N(0, 1), Y2 = Y1 + noise_sd * N(0, 1).
struct CopyPlusNoise
{
  double noise_sd = 1.0;
};

enum class Marginal
{
  normal,
  uniform,
  laplace
};

//! Independent unit-variance variables with the listed marginals.
struct ProductOfMarginals
{
  std::vector<Marginal> marginals;
};

//! Two iid uniforms on [-sqrt 3, sqrt 3] rotated by `angle`: uncorrelated,
//! unit variances, dependent unless the angle is a multiple of pi / 2.
struct RotatedUniform
{
  double angle = std::numbers::pi / 4.0;
};

} // namespace scenario

using ScenarioGenerator = std::variant<scenario::DiscreteJointSampler,
                                       scenario::BivariateGaussian,
                                       scenario::CopyPlusNoise,
                                       scenario::ProductOfMarginals,
                                       scenario::RotatedUniform>;

class Scenario
{
public:
  explicit Scenario(ScenarioGenerator g)
    : generator_(std::move(g))
  {
    std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, scenario::BivariateGaussian>) {
          if (!(std::abs(s.rho) < 1.0))
            throw std::invalid_argument("|rho| must be below 1");
        } else if constexpr (std::is_same_v<T, scenario::CopyPlusNoise>) {
          if (!(s.noise_sd >= 0.0) || !std::isfinite(s.noise_sd))
            throw std::invalid_argument("noise_sd must be nonnegative");
        } else if constexpr (std::is_same_v<T, scenario::ProductOfMarginals>) {
          if (s.marginals.size() < 2)
            throw std::invalid_argument("product scenario needs at least two marginals");
        } else if constexpr (std::is_same_v<T, scenario::RotatedUniform>) {
          if (!std::isfinite(s.angle))
            throw std::invalid_argument("angle must be finite");
        }
      },
      generator_);
  }

  const ScenarioGenerator& generator() const noexcept { return generator_; }

  std::size_t k() const
  {
    if (auto* d = std::get_if<scenario::DiscreteJointSampler>(&generator_))
      return d->joint.k();
    if (auto* p = std::get_if<scenario::ProductOfMarginals>(&generator_))
      return p->marginals.size();
    return 2;
  }

  //! True when the variables are independent by construction.
  bool independent() const
  {
    return std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, scenario::DiscreteJointSampler>)
          return s.joint.tv_from_product() == 0.0;
        else if constexpr (std::is_same_v<T, scenario::BivariateGaussian>)
          return s.rho == 0.0;
        else if constexpr (std::is_same_v<T, scenario::CopyPlusNoise>)
          return false;
        else if constexpr (std::is_same_v<T, scenario::ProductOfMarginals>)
          return true;
        else
          return std::abs(std::sin(2.0 * s.angle)) < 1e-15;
      },
      generator_);
  }

  //! Population standard deviation of each variable.
  std::vector<double> true_std_devs() const
  {
    if (auto* d = std::get_if<scenario::DiscreteJointSampler>(&generator_))
      return d->joint.std_devs();
    if (auto* c = std::get_if<scenario::CopyPlusNoise>(&generator_))
      return { 1.0, std::sqrt(1.0 + c->noise_sd * c->noise_sd) };
    return std::vector<double>(k(), 1.0);
  }

  //! Exact Q where a closed form or finite sum exists.
  std::optional<double> exact_q(const KernelSpec& kernel, const ScaleFactors& sigma) const
  {
    if (auto* d = std::get_if<scenario::DiscreteJointSampler>(&generator_))
      return exact_q_discrete(d->joint, kernel, sigma);
    if (independent())
      return 0.0;
    if (kernel.family() != KernelFamily::gaussian)
      return std::nullopt;
    if (auto* g = std::get_if<scenario::BivariateGaussian>(&generator_))
      return gaussian_q_exact({ 1.0, g->rho, g->rho, 1.0 }, kernel, sigma);
    if (auto* c = std::get_if<scenario::CopyPlusNoise>(&generator_))
      return gaussian_q_exact({ 1.0, 1.0, 1.0, 1.0 + c->noise_sd * c->noise_sd }, kernel, sigma);
    return std::nullopt;
  }

  //! n rows drawn with the given engine.
  Sample draw(std::size_t n, std::mt19937_64& rng) const
  {
    const std::size_t kk = k();
    std::vector<double> data(n * kk);
    std::normal_distribution<double> normal;
    std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, scenario::DiscreteJointSampler>) {
          std::discrete_distribution<std::size_t> pick(s.joint.probs().begin(),
                                                       s.joint.probs().end());
          for (std::size_t i = 0; i < n; ++i) {
            const auto& atom = s.joint.atoms()[pick(rng)];
            for (std::size_t k = 0; k < kk; ++k)
              data[k * n + i] = atom[k];
          }
        } else if constexpr (std::is_same_v<T, scenario::BivariateGaussian>) {
          const double c = std::sqrt(1.0 - s.rho * s.rho);
          for (std::size_t i = 0; i < n; ++i) {
            const double a = normal(rng);
            const double b = normal(rng);
            data[i] = a;
            data[n + i] = s.rho * a + c * b;
          }
        } else if constexpr (std::is_same_v<T, scenario::CopyPlusNoise>) {
          for (std::size_t i = 0; i < n; ++i) {
            const double a = normal(rng);
            data[i] = a;
            data[n + i] = a + s.noise_sd * normal(rng);
          }
        } else if constexpr (std::is_same_v<T, scenario::ProductOfMarginals>) {
          const double root3 = std::sqrt(3.0);
          std::uniform_real_distribution<double> uniform(-root3, root3);
          std::exponential_distribution<double> laplace_mag(std::sqrt(2.0));
          std::bernoulli_distribution coin;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < kk; ++k) {
              double v = 0.0;
              switch (s.marginals[k]) {
                case scenario::Marginal::normal:
                  v = normal(rng);
                  break;
                case scenario::Marginal::uniform:
                  v = uniform(rng);
                  break;
                case scenario::Marginal::laplace:
                  v = laplace_mag(rng);
                  if (coin(rng))
                    v = -v;
                  break;
              }
              data[k * n + i] = v;
            }
        } else {
          const double root3 = std::sqrt(3.0);
          std::uniform_real_distribution<double> uniform(-root3, root3);
          const double c = std::cos(s.angle);
          const double sn = std::sin(s.angle);
          for (std::size_t i = 0; i < n; ++i) {
            const double a = uniform(rng);
            const double b = uniform(rng);
            data[i] = c * a - sn * b;
            data[n + i] = sn * a + c * b;
          }
        }
      },
      generator_);
    return Sample(n, kk, std::move(data));
  }

private:
  ScenarioGenerator generator_;
};

//! SplitMix64 finalizer.
inline std::uint64_t
mix64(std::uint64_t z)
{
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

//! Engine for one replicate; a pure function of (seed, replicate_index).
inline std::mt19937_64
replicate_engine(std::uint64_t seed, std::uint64_t replicate_index)
{
  return std::mt19937_64(mix64(mix64(seed) ^ mix64(replicate_index + 0x632be59bd9b4e019ULL)));
}

inline Sample
generate(const Scenario& scenario, std::size_t n, std::uint64_t seed, std::uint64_t replicate_index)
{
  auto rng = replicate_engine(seed, replicate_index);
  return scenario.draw(n, rng);
}

//! Evaluates fn(i) for i in [0, count) on `workers` threads. Results are
//! stored by index, so the output does not depend on the worker count. The
//! first exception thrown by fn is rethrown.
template<class Fn>
auto
run_replicates(std::size_t count, std::size_t workers, Fn&& fn)
  -> std::vector<decltype(fn(std::size_t{}))>
{
  using T = decltype(fn(std::size_t{}));
  std::vector<std::optional<T>> slots(count);
  std::atomic<std::size_t> next{ 0 };
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count)
        return;
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure)
          failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back(work);
    for (auto& t : pool)
      t.join();
  }
  if (failure)
    std::rethrow_exception(failure);
  std::vector<T> out;
  out.reserve(count);
  for (auto& s : slots)
    out.push_back(std::move(*s));
  return out;
}

//! q_hat over `replicates` independent samples of size n.
inline std::vector<double>
replicate_q_values(const Scenario& scenario,
                   const KernelSpec& kernel,
                   const ScaleFactors& sigma,
                   std::size_t n,
                   std::size_t replicates,
                   std::uint64_t seed,
                   std::size_t workers = 1)
{
  return run_replicates(replicates, workers, [&](std::size_t r) {
    return estimate_q(generate(scenario, n, seed, r), kernel, sigma).q_hat;
  });
}

struct SweepPlan
{
  Scenario scenario{ scenario::CopyPlusNoise{ 1.0 } };
  KernelFamily kernel = KernelFamily::gaussian;
  std::vector<double> h_grid{ 1.0 };
  std::vector<std::size_t> n_grid{ 100 };
  std::size_t replicates = 500;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  //! Defaults to the scenario's true standard deviations.
  std::optional<std::vector<double>> sigma;

  ScaleFactors scale_factors() const
  {
    return ScaleFactors::user(sigma ? *sigma : scenario.true_std_devs());
  }

  void validate() const
  {
    if (h_grid.empty() || n_grid.empty())
      throw std::invalid_argument("sweep grids must be nonempty");
    for (std::size_t i = 0; i < h_grid.size(); ++i) {
      if (!(h_grid[i] > 0.0))
        throw std::invalid_argument("h must be positive");
      if (i > 0 && !(h_grid[i] > h_grid[i - 1]))
        throw std::invalid_argument("h grid must be strictly increasing");
    }
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
      if (n_grid[i] < 2)
        throw std::invalid_argument("sample sizes must be at least 2");
      if (i > 0 && !(n_grid[i] > n_grid[i - 1]))
        throw std::invalid_argument("n grid must be strictly increasing");
    }
    if (replicates < 100)
      throw std::invalid_argument("a sweep needs at least 100 replicates");
    if (!(alpha > 0.0 && alpha < 1.0))
      throw std::invalid_argument("alpha must lie in (0, 1)");
    if (sigma && sigma->size() != scenario.k())
      throw std::invalid_argument("sigma count does not match the scenario");
  }
};

struct SweepCell
{
  double h = 0.0;
  std::size_t n = 0;
  std::size_t replicates = 0;
  double mean_q = 0.0;
  double var_q = 0.0;
  double se_mean_q = 0.0;
  double se_var_q = 0.0;
  //! Type I error under an independent scenario, power otherwise. Computed
  //! over replicates whose null approximation was usable.
  double rejection_rate = 0.0;
  double se_rejection_rate = 0.0;
  double mean_e1 = 0.0;
  double mean_v1 = 0.0;
  double mean_gamma = 0.0;
  double mean_beta = 0.0;
  std::size_t degenerate_nulls = 0;
  //! Exact Q when available, NaN otherwise.
  double exact_q = std::numeric_limits<double>::quiet_NaN();
  //! Mean seconds per replicate; excluded from equality.
  double seconds_per_replicate = 0.0;

  bool flagged() const { return degenerate_nulls > 0; }

  friend bool operator==(const SweepCell& a, const SweepCell& b)
  {
    auto same = [](double x, double y) {
      return x == y || (std::isnan(x) && std::isnan(y));
    };
    return a.h == b.h && a.n == b.n && a.replicates == b.replicates &&
           same(a.mean_q, b.mean_q) && same(a.var_q, b.var_q) &&
           same(a.se_mean_q, b.se_mean_q) && same(a.se_var_q, b.se_var_q) &&
           same(a.rejection_rate, b.rejection_rate) &&
           same(a.se_rejection_rate, b.se_rejection_rate) && same(a.mean_e1, b.mean_e1) &&
           same(a.mean_v1, b.mean_v1) && same(a.mean_gamma, b.mean_gamma) &&
           same(a.mean_beta, b.mean_beta) && a.degenerate_nulls == b.degenerate_nulls &&
           same(a.exact_q, b.exact_q);
  }
};

struct SweepResult
{
  SweepPlan plan;
  //! Cells ordered by n, then h.
  std::vector<SweepCell> cells;

  const SweepCell& cell(double h, std::size_t n) const
  {
    for (const auto& c : cells)
      if (c.h == h && c.n == n)
        return c;
    throw std::out_of_range("no such sweep cell");
  }
};

//! Runs every (h, n) cell. Each replicate draws one sample and evaluates every
//! bandwidth on it; the reduction runs in replicate order.
inline SweepResult
run_sweep(const SweepPlan& plan, std::size_t workers)
{
  plan.validate();
  const auto sigma = plan.scale_factors();
  struct Outcome
  {
    double q = 0.0;
    bool reject = false;
    bool degenerate = false;
    NullApprox null;
    double seconds = 0.0;
  };

  SweepResult result{ plan, {} };
  for (std::size_t n : plan.n_grid) {
    const auto per_replicate =
      run_replicates(plan.replicates, workers, [&](std::size_t r) {
        const auto sample = generate(plan.scenario, n, plan.seed, r);
        std::vector<Outcome> out;
        for (double h : plan.h_grid) {
          const auto start = std::chrono::steady_clock::now();
          const KernelSpec kernel(plan.kernel, h);
          const auto st = detail::pair_statistics(sample, kernel, sigma);
          Outcome o;
          o.q = detail::terms_from_statistics(st).q_hat;
          try {
            o.null = null_moments_from(marginal_moments(st), kernel, NullMomentForm::derived);
            o.reject = o.q > gamma_critical_value(o.null, n, plan.alpha);
          } catch (const DegenerateNull&) {
            o.degenerate = true;
          }
          o.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
          out.push_back(o);
        }
        return out;
      });

    for (std::size_t hi = 0; hi < plan.h_grid.size(); ++hi) {
      SweepCell cell;
      cell.h = plan.h_grid[hi];
      cell.n = n;
      cell.replicates = plan.replicates;
      std::vector<double> qs;
      std::size_t rejections = 0, usable = 0;
      double e1 = 0.0, v1 = 0.0, g = 0.0, b = 0.0, secs = 0.0;
      for (const auto& rep : per_replicate) {
        const auto& o = rep[hi];
        qs.push_back(o.q);
        secs += o.seconds;
        if (o.degenerate) {
          ++cell.degenerate_nulls;
          continue;
        }
        ++usable;
        rejections += o.reject ? 1 : 0;
        e1 += o.null.e1;
        v1 += o.null.v1;
        g += o.null.gamma;
        b += o.null.beta;
      }
      const auto m = stats::moments(qs);
      cell.mean_q = m.mean;
      cell.var_q = m.variance;
      cell.se_mean_q = m.se_mean;
      cell.se_var_q = m.se_variance;
      std::tie(cell.rejection_rate, cell.se_rejection_rate) = stats::proportion(rejections, usable);
      if (usable > 0) {
        const double u = static_cast<double>(usable);
        cell.mean_e1 = e1 / u;
        cell.mean_v1 = v1 / u;
        cell.mean_gamma = g / u;
        cell.mean_beta = b / u;
      }
      if (auto q = plan.scenario.exact_q(KernelSpec(plan.kernel, cell.h), sigma))
        cell.exact_q = *q;
      cell.seconds_per_replicate = secs / static_cast<double>(plan.replicates);
      result.cells.push_back(cell);
    }
  }
  return result;
}

//! Empirical law of N q_hat under an independent scenario against the fitted
//! gamma * chi2(beta) with replicate-averaged gamma and beta.
struct NullLawSummary
{
  std::size_t n = 0;
  std::size_t replicates = 0;
  double gamma = 0.0;
  double beta = 0.0;
  double ks = 0.0;
  //! Rejection rate of the per-replicate gamma-chi-square test at alpha.
  double size = 0.0;
  double se_size = 0.0;
  double alpha = 0.05;
  std::size_t degenerate_nulls = 0;
  std::vector<double> scaled_q;
  std::vector<std::pair<double, double>> qq;
};

inline NullLawSummary
estimate_null_law(const Scenario& scenario,
                  const KernelSpec& kernel,
                  std::size_t n,
                  std::size_t replicates,
                  std::uint64_t seed,
                  double alpha = 0.05,
                  std::size_t workers = 1,
                  std::optional<std::vector<double>> sigma_values = std::nullopt)
{
  if (!scenario.independent())
    throw std::invalid_argument("the null law needs an independent scenario");
  const auto sigma = ScaleFactors::user(sigma_values ? *sigma_values : scenario.true_std_devs());
  struct Outcome
  {
    double scaled = 0.0;
    std::optional<NullApprox> null;
    bool reject = false;
  };
  const auto outcomes = run_replicates(replicates, workers, [&](std::size_t r) {
    const auto sample = generate(scenario, n, seed, r);
    const auto st = detail::pair_statistics(sample, kernel, sigma);
    Outcome o;
    const double q = detail::terms_from_statistics(st).q_hat;
    o.scaled = static_cast<double>(n) * q;
    try {
      o.null = null_moments_from(marginal_moments(st), kernel, NullMomentForm::derived);
      o.reject = q > gamma_critical_value(*o.null, n, alpha);
    } catch (const DegenerateNull&) {
    }
    return o;
  });

  NullLawSummary s;
  s.n = n;
  s.replicates = replicates;
  s.alpha = alpha;
  std::size_t usable = 0, rejections = 0;
  for (const auto& o : outcomes) {
    s.scaled_q.push_back(o.scaled);
    if (!o.null) {
      ++s.degenerate_nulls;
      continue;
    }
    ++usable;
    rejections += o.reject ? 1 : 0;
    s.gamma += o.null->gamma;
    s.beta += o.null->beta;
  }
  if (usable == 0)
    throw DegenerateNull("null approximation degenerate in every replicate");
  s.gamma /= static_cast<double>(usable);
  s.beta /= static_cast<double>(usable);
  std::tie(s.size, s.se_size) = stats::proportion(rejections, usable);
  const ScaledChiSquare law(s.gamma, s.beta);
  s.ks = stats::ks_distance(s.scaled_q, [&](double x) { return law.cdf(x); });
  s.qq = stats::qq_pairs(s.scaled_q, [&](double p) { return law.quantile(p); }, 99);
  return s;
}

//! Rejection rate at level alpha when every replicate is calibrated by B
//! permutations.
inline std::pair<double, double>
permutation_rejection_rate(const Scenario& scenario,
                           const KernelSpec& kernel,
                           std::size_t n,
                           std::size_t replicates,
                           std::size_t permutations,
                           double alpha,
                           std::uint64_t seed,
                           std::size_t workers = 1)
{
  const auto sigma = ScaleFactors::user(scenario.true_std_devs());
  const auto rejects = run_replicates(replicates, workers, [&](std::size_t r) {
    const auto sample = generate(scenario, n, seed, r);
    const double q = estimate_q(sample, kernel, sigma).q_hat;
    const auto [q_alpha, p] = permutation_decision(
      permutation_q_values(sample, kernel, sigma, permutations, mix64(seed + 1) ^ r), q, alpha);
    return q > q_alpha ? 1 : 0;
  });
  std::size_t hits = 0;
  for (int v : rejects)
    hits += static_cast<std::size_t>(v);
  return stats::proportion(hits, replicates);
}

} // namespace qdep
