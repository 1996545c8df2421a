#include <qdep/simlab.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace qdep;

namespace {

const KernelSpec gauss1{ KernelFamily::gaussian, 1.0 };

double
correlation(const Sample& s)
{
  const auto a = s.column(0);
  const auto b = s.column(1);
  const double n = static_cast<double>(s.n());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < s.n(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

SweepPlan
small_plan()
{
  SweepPlan plan;
  plan.scenario = Scenario(scenario::CopyPlusNoise{ 2.0 });
  plan.h_grid = { 0.5, 1.0, 2.0 };
  plan.n_grid = { 40, 80 };
  plan.replicates = 100;
  plan.seed = 77;
  return plan;
}

} // namespace

TEST(Scenario, ValidatesParameters)
{
  EXPECT_THROW(Scenario(scenario::BivariateGaussian{ 1.0 }), std::invalid_argument);
  EXPECT_THROW(Scenario(scenario::CopyPlusNoise{ -0.1 }), std::invalid_argument);
  EXPECT_THROW(Scenario(scenario::ProductOfMarginals{ { scenario::Marginal::normal } }),
               std::invalid_argument);
  EXPECT_THROW(Scenario(scenario::RotatedUniform{ std::nan("") }), std::invalid_argument);
  EXPECT_NO_THROW(Scenario(scenario::CopyPlusNoise{ 0.0 }));
}

TEST(Scenario, IndependenceAndExactQ)
{
  EXPECT_TRUE(Scenario(scenario::BivariateGaussian{ 0.0 }).independent());
  EXPECT_FALSE(Scenario(scenario::BivariateGaussian{ 0.3 }).independent());
  EXPECT_TRUE(Scenario(scenario::RotatedUniform{ 0.0 }).independent());
  EXPECT_FALSE(Scenario(scenario::RotatedUniform{}).independent());
  const Scenario copy(scenario::CopyPlusNoise{ 1.0 });
  const auto sigma = ScaleFactors::user(copy.true_std_devs());
  EXPECT_GT(*copy.exact_q(gauss1, sigma), 0.0);
  EXPECT_FALSE(copy.exact_q(KernelSpec(KernelFamily::square_cauchy, 1.0), sigma).has_value());
  EXPECT_FALSE(Scenario(scenario::RotatedUniform{}).exact_q(gauss1, ScaleFactors::ones(2)));
  EXPECT_EQ(*Scenario(scenario::ProductOfMarginals{ { scenario::Marginal::uniform,
                                                      scenario::Marginal::laplace } })
               .exact_q(gauss1, ScaleFactors::ones(2)),
            0.0);
}

TEST(Generate, DeterministicPerSeedAndIndex)
{
  const Scenario sc(scenario::CopyPlusNoise{ 1.0 });
  const auto a = generate(sc, 50, 123, 4);
  const auto b = generate(sc, 50, 123, 4);
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t k = 0; k < 2; ++k)
      EXPECT_EQ(a(i, k), b(i, k));
  const auto c = generate(sc, 50, 123, 5);
  const auto d = generate(sc, 50, 124, 4);
  EXPECT_NE(a(0, 0), c(0, 0));
  EXPECT_NE(a(0, 0), d(0, 0));
}

TEST(Generate, DiscreteFrequenciesWithinMultinomialBands)
{
  const DiscreteJoint joint({ { 0.0, 0.0 }, { 1.0, 1.0 }, { 0.0, 1.0 } }, { 0.5, 0.3, 0.2 });
  const Scenario sc(scenario::DiscreteJointSampler{ joint });
  const std::size_t n = 100000;
  const auto s = generate(sc, n, 9, 0);
  std::vector<std::size_t> counts(joint.size(), 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < joint.size(); ++m)
      if (s.row(i) == joint.atoms()[m])
        ++counts[m];
  EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{ 0 }), n);
  for (std::size_t m = 0; m < joint.size(); ++m) {
    const double p = joint.probs()[m];
    const double band = 3.0 * std::sqrt(p * (1.0 - p) / double(n));
    EXPECT_NEAR(double(counts[m]) / double(n), p, band) << "atom " << m;
  }
}

TEST(Generate, CoupledPairFrequencies)
{
  const DiscreteJoint joint({ { 0.0, 0.0 }, { 1.0, 1.0 } }, { 0.5, 0.5 });
  const auto s = generate(Scenario(scenario::DiscreteJointSampler{ joint }), 100000, 2, 0);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < s.n(); ++i) {
    ASSERT_EQ(s(i, 0), s(i, 1));
    ones += s(i, 0) == 1.0 ? 1 : 0;
  }
  EXPECT_NEAR(double(ones) / 1e5, 0.5, 3.0 * std::sqrt(0.25 / 1e5));
}

TEST(Generate, IndependentGaussianIsUncorrelated)
{
  const auto s = generate(Scenario(scenario::BivariateGaussian{ 0.0 }), 100000, 1, 0);
  EXPECT_NEAR(correlation(s), 0.0, 0.01);
  const auto t = generate(Scenario(scenario::BivariateGaussian{ 0.6 }), 100000, 1, 0);
  EXPECT_NEAR(correlation(t), 0.6, 0.01);
}

TEST(Generate, MarginalsHaveUnitVariance)
{
  using scenario::Marginal;
  const Scenario prod(
    scenario::ProductOfMarginals{ { Marginal::normal, Marginal::uniform, Marginal::laplace } });
  const auto s = generate(prod, 200000, 3, 0);
  for (std::size_t k = 0; k < 3; ++k)
    EXPECT_NEAR(population_std_dev(s.column(k)), 1.0, 0.01) << "column " << k;
  const auto r = generate(Scenario(scenario::RotatedUniform{}), 200000, 3, 0);
  EXPECT_NEAR(correlation(r), 0.0, 0.01);
  EXPECT_NEAR(population_std_dev(r.column(0)), 1.0, 0.01);
  const auto c = generate(Scenario(scenario::CopyPlusNoise{ 2.0 }), 200000, 3, 0);
  EXPECT_NEAR(population_std_dev(c.column(1)), std::sqrt(5.0), 0.02);
}

TEST(RunReplicates, OrderedAndWorkerInvariant)
{
  auto square = [](std::size_t i) { return static_cast<double>(i * i); };
  const auto one = run_replicates(1000, 1, square);
  const auto many = run_replicates(1000, 8, square);
  EXPECT_EQ(one, many);
  EXPECT_EQ(one[31], 961.0);
  EXPECT_TRUE(run_replicates(0, 4, square).empty());
}

TEST(RunReplicates, PropagatesExceptions)
{
  auto fail = [](std::size_t i) -> int {
    if (i == 17)
      throw std::runtime_error("replicate 17");
    return 0;
  };
  EXPECT_THROW(run_replicates(100, 1, fail), std::runtime_error);
  EXPECT_THROW(run_replicates(100, 4, fail), std::runtime_error);
}

TEST(SweepPlan, Validation)
{
  auto plan = small_plan();
  EXPECT_NO_THROW(plan.validate());
  plan.replicates = 99;
  EXPECT_THROW(plan.validate(), std::invalid_argument);
  plan = small_plan();
  plan.h_grid = { 1.0, 0.5 };
  EXPECT_THROW(plan.validate(), std::invalid_argument);
  plan = small_plan();
  plan.h_grid = { -1.0 };
  EXPECT_THROW(plan.validate(), std::invalid_argument);
  plan = small_plan();
  plan.alpha = 1.0;
  EXPECT_THROW(plan.validate(), std::invalid_argument);
  plan = small_plan();
  plan.sigma = std::vector<double>{ 1.0 };
  EXPECT_THROW(plan.validate(), std::invalid_argument);
}

TEST(RunSweep, IndependentScenarioHasLowRejectionRate)
{
  SweepPlan plan;
  plan.scenario = Scenario(scenario::BivariateGaussian{ 0.0 });
  plan.h_grid = { 1.0 };
  plan.n_grid = { 200 };
  plan.replicates = 100;
  plan.seed = 5;
  const auto result = run_sweep(plan, 1);
  ASSERT_EQ(result.cells.size(), 1u);
  const auto& cell = result.cells.front();
  EXPECT_GE(cell.rejection_rate, 0.0);
  EXPECT_LE(cell.rejection_rate, 0.15);
  EXPECT_EQ(cell.exact_q, 0.0);
  EXPECT_FALSE(cell.flagged());
}

TEST(RunSweep, CellShapeAndRanges)
{
  const auto plan = small_plan();
  const auto result = run_sweep(plan, 2);
  ASSERT_EQ(result.cells.size(), plan.h_grid.size() * plan.n_grid.size());
  for (std::size_t ni = 0; ni < plan.n_grid.size(); ++ni)
    for (std::size_t hi = 0; hi < plan.h_grid.size(); ++hi) {
      const auto& c = result.cells[ni * plan.h_grid.size() + hi];
      EXPECT_EQ(c.n, plan.n_grid[ni]);
      EXPECT_EQ(c.h, plan.h_grid[hi]);
      EXPECT_GE(c.rejection_rate, 0.0);
      EXPECT_LE(c.rejection_rate, 1.0);
      EXPECT_GE(c.var_q, 0.0);
      EXPECT_GT(c.mean_gamma, 0.0);
      EXPECT_GT(c.exact_q, 0.0);
      EXPECT_EQ(&result.cell(c.h, c.n), &c);
    }
  EXPECT_THROW(result.cell(3.0, 40), std::out_of_range);
}

TEST(RunSweep, BitIdenticalAcrossWorkerCounts)
{
  const auto plan = small_plan();
  const auto a = run_sweep(plan, 1);
  const auto b = run_sweep(plan, 8);
  ASSERT_EQ(a.cells.size(), b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i)
    EXPECT_TRUE(a.cells[i] == b.cells[i]) << "cell " << i;
}

TEST(RunSweep, ConstantColumnsAreFlaggedNotFatal)
{
  // Every draw of a two-atom coupled pair at n = 2 may collapse to one row.
  SweepPlan plan;
  plan.scenario = Scenario(scenario::DiscreteJointSampler{
    DiscreteJoint({ { 0.0, 0.0 }, { 1.0, 1.0 } }, { 0.5, 0.5 }) });
  plan.h_grid = { 1.0 };
  plan.n_grid = { 2 };
  plan.replicates = 100;
  const auto result = run_sweep(plan, 1);
  EXPECT_TRUE(result.cells.front().flagged());
  EXPECT_LT(result.cells.front().degenerate_nulls, 100u);
}

TEST(NullLaw, SmallRunIsReported)
{
  const Scenario sc(scenario::BivariateGaussian{ 0.0 });
  const auto tiny = estimate_null_law(sc, gauss1, 20, 200, 1);
  EXPECT_GT(tiny.ks, 0.0);
  EXPECT_EQ(tiny.scaled_q.size(), 200u);
  EXPECT_EQ(tiny.qq.size(), 99u);
  const auto s = estimate_null_law(sc, gauss1, 200, 500, 2);
  EXPECT_LT(s.ks, 0.08);
  EXPECT_NEAR(s.size, 0.05, 4.0 * std::sqrt(0.05 * 0.95 / 500));
  EXPECT_THROW(estimate_null_law(Scenario(scenario::CopyPlusNoise{ 1.0 }), gauss1, 50, 100, 1),
               std::invalid_argument);
}

TEST(PowerRuns, SmallNoiseCopyIsAlwaysRejected)
{
  const Scenario sc(scenario::CopyPlusNoise{ 0.1 });
  const auto sigma = ScaleFactors::user(sc.true_std_devs());
  const auto rejects = run_replicates(1000, 1, [&](std::size_t r) {
    return run_test(generate(sc, 500, 11, r), gauss1, sigma, 0.05).reject ? 1 : 0;
  });
  EXPECT_GE(std::accumulate(rejects.begin(), rejects.end(), 0), 990);
}

TEST(PowerRuns, PermutationRateUnderIndependence)
{
  const Scenario sc(scenario::BivariateGaussian{ 0.0 });
  const auto [rate, se] = permutation_rejection_rate(sc, gauss1, 100, 100, 99, 0.05, 8);
  EXPECT_LE(rate, 0.15);
  EXPECT_GT(se, 0.0);
}

TEST(PowerRuns, AsymptoticPowerTracksEmpiricalPower)
{
  const Scenario sc(scenario::CopyPlusNoise{ 4.0 });
  const auto sigma = ScaleFactors::user(sc.true_std_devs());
  const std::size_t n = 800;
  const auto reference = generate(sc, 3200, 99, 0);
  const double sigma_tilde = variance_expansion(reference, gauss1, sigma).sigma_tilde;
  const double q_alpha = gamma_critical_value(null_moments(reference, gauss1, sigma), n, 0.05);
  const double predicted = asymptotic_power(*sc.exact_q(gauss1, sigma), sigma_tilde, n, q_alpha);
  const auto rejects = run_replicates(300, 1, [&](std::size_t r) {
    return run_test(generate(sc, n, 7, r), gauss1, sigma, 0.05).reject ? 1 : 0;
  });
  const double empirical = std::accumulate(rejects.begin(), rejects.end(), 0) / 300.0;
  EXPECT_NEAR(predicted, empirical, 0.1);
}

TEST(Stats, MomentsAndProportion)
{
  const auto m = stats::moments({ 1.0, 2.0, 3.0, 4.0 });
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.variance, 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.se_mean, std::sqrt(5.0 / 12.0));
  const auto [p, se] = stats::proportion(25, 100);
  EXPECT_DOUBLE_EQ(p, 0.25);
  EXPECT_DOUBLE_EQ(se, std::sqrt(0.25 * 0.75 / 100.0));
  EXPECT_EQ(stats::proportion(0, 0).first, 0.0);
}

TEST(Stats, OlsSlope)
{
  EXPECT_DOUBLE_EQ(stats::ols_slope({ 1.0, 2.0, 3.0 }, { 2.0, 0.0, -2.0 }), -2.0);
  EXPECT_THROW(stats::ols_slope({ 1.0 }, { 1.0 }), std::invalid_argument);
}

TEST(Stats, KsDistance)
{
  std::vector<double> grid;
  for (int i = 0; i < 100; ++i)
    grid.push_back((i + 0.5) / 100.0);
  auto uniform = [](double x) { return std::clamp(x, 0.0, 1.0); };
  EXPECT_NEAR(stats::ks_distance(grid, uniform), 0.005, 1e-12);
  EXPECT_NEAR(stats::ks_distance({ 0.5 }, uniform), 0.5, 1e-12);
}

TEST(Stats, AndersonDarling)
{
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(3.0, 2.0);
  std::exponential_distribution<double> expo;
  std::vector<double> gaussian(500), skewed(500);
  for (auto& v : gaussian)
    v = normal(rng);
  for (auto& v : skewed)
    v = expo(rng);
  EXPECT_FALSE(stats::anderson_darling_normal(gaussian).reject_at_1pct);
  EXPECT_TRUE(stats::anderson_darling_normal(skewed).reject_at_1pct);
  EXPECT_THROW(stats::anderson_darling_normal({ 1.0, 2.0 }), std::invalid_argument);
}

TEST(Stats, QqPairsFollowTheModel)
{
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = (double(i) + 0.5) / 1000.0;
  const auto qq = stats::qq_pairs(x, [](double p) { return p; }, 10);
  ASSERT_EQ(qq.size(), 10u);
  for (const auto& [emp, model] : qq)
    EXPECT_NEAR(emp, model, 1e-3);
}
