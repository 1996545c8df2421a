#include <qdep/estimator.hpp>
#include <qdep/oracle.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace qdep;

namespace {

Sample
random_sample(std::size_t n, std::size_t k, std::uint64_t seed, double coupling = 0.5)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> data(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double common = normal(rng);
    for (std::size_t j = 0; j < k; ++j)
      data[j * n + i] = coupling * common + normal(rng);
  }
  return { n, k, std::move(data) };
}

Sample
two_point_sample()
{
  return Sample::from_rows({ { 0.0, 0.0 }, { 1.0, 1.0 } });
}

Sample
identical_rows(std::size_t n, std::vector<double> row)
{
  return Sample::from_rows(std::vector<std::vector<double>>(n, row));
}

const KernelSpec gauss1{ KernelFamily::gaussian, 1.0 };

} // namespace

TEST(Sample, ValidatesShapeAndValues)
{
  EXPECT_THROW(Sample(2, 1, { 1.0, 2.0 }), std::invalid_argument);
  EXPECT_THROW(Sample(2, 2, { 1.0, 2.0, 3.0 }), std::invalid_argument);
  EXPECT_THROW(Sample(2, 2, { 1.0, 2.0, 3.0, std::nan("") }), std::invalid_argument);
  const auto s = Sample::from_rows({ { 1.0, 2.0 }, { 3.0, 4.0 } });
  EXPECT_EQ(s(1, 0), 3.0);
  EXPECT_EQ(s(0, 1), 2.0);
  EXPECT_EQ(s.row(1), (std::vector<double>{ 3.0, 4.0 }));
}

TEST(ScaleFactors, ConstantColumnIsZeroVariance)
{
  const auto s = Sample::from_columns({ { 1.0, 1.0, 1.0 }, { 0.0, 1.0, 2.0 } });
  try {
    (void)scale_factors(s, ScaleSource::sample_std_dev);
    FAIL() << "expected ZeroVariance";
  } catch (const ZeroVariance& e) {
    EXPECT_EQ(e.column(), 0u);
  }
}

TEST(ScaleFactors, PopulationStdDevAndHomogeneity)
{
  const auto s = Sample::from_columns({ { 0.0, 2.0 }, { 0.0, 6.0 } });
  const auto sf = scale_factors(s, ScaleSource::sample_std_dev);
  EXPECT_DOUBLE_EQ(sf.sigma[0], 1.0);
  EXPECT_DOUBLE_EQ(sf.sigma[1], 3.0);
  EXPECT_EQ(sf.source, ScaleSource::sample_std_dev);

  const auto r = random_sample(50, 2, 3);
  auto scaled = r.column_major();
  for (std::size_t i = 0; i < 50; ++i)
    scaled[i] *= -2.5;
  const auto a = sample_scale_factors(r);
  const auto b = sample_scale_factors(Sample(50, 2, scaled));
  EXPECT_NEAR(b.sigma[0], 2.5 * a.sigma[0], 1e-12);
  EXPECT_DOUBLE_EQ(b.sigma[1], a.sigma[1]);
}

TEST(ScaleFactors, UserSuppliedPassesThrough)
{
  const auto s = random_sample(10, 2, 1);
  const auto sf = scale_factors(s, ScaleSource::user_supplied, { 2.0, 0.5 });
  EXPECT_EQ(sf.sigma, (std::vector<double>{ 2.0, 0.5 }));
  EXPECT_THROW(scale_factors(s, ScaleSource::user_supplied, { 2.0 }), std::invalid_argument);
  EXPECT_THROW(ScaleFactors::user({ 1.0, 0.0 }), std::invalid_argument);
}

TEST(PiHatJoint, HandValues)
{
  const auto one = Sample::from_rows({ { 0.3, -1.2 } });
  const std::vector<double> y1{ 0.3, -1.2 };
  EXPECT_DOUBLE_EQ(pi_hat_joint(one, gauss1, ScaleFactors::ones(2), y1), 1.0);

  const std::vector<double> origin{ 0.0, 0.0 };
  EXPECT_NEAR(pi_hat_joint(two_point_sample(), gauss1, ScaleFactors::ones(2), origin),
              (1.0 + std::exp(-2.0)) / 2.0, 1e-15);

  const std::vector<double> far{ 1e10, 1e10 };
  EXPECT_LT(pi_hat_joint(random_sample(20, 2, 4), gauss1, ScaleFactors::ones(2), far), 1e-300);
}

TEST(PiHatMarginal, HandValue)
{
  EXPECT_NEAR(pi_hat_marginal(two_point_sample(), gauss1, ScaleFactors::ones(2), 1, 0.0),
              (1.0 + std::exp(-1.0)) / 2.0, 1e-15);
}

TEST(EstimateQ, TwoPointWorkedExample)
{
  const auto q = estimate_q(two_point_sample(), gauss1, ScaleFactors::ones(2));
  const double e1 = std::exp(-1.0);
  EXPECT_NEAR(q.term1, (1.0 + std::exp(-2.0)) / 2.0, 1e-15);
  EXPECT_NEAR(q.term2, std::pow((1.0 + e1) / 2.0, 2), 1e-15);
  EXPECT_NEAR(q.term3, std::pow((1.0 + e1) / 2.0, 2), 1e-15);
  const double expected = ((1.0 + std::exp(-2.0)) / 2.0 - std::pow((1.0 + e1) / 2.0, 2)) / 2.0;
  EXPECT_NEAR(q.q_hat, expected, 1e-15);
  EXPECT_EQ(q.q_hat, (q.term1 + q.term2 - 2.0 * q.term3) / 2.0);
  EXPECT_EQ(q.n, 2u);
}

TEST(EstimateQ, IdenticalRowsGiveZero)
{
  for (auto f : all_kernel_families) {
    const auto q =
      estimate_q(identical_rows(7, { 1.5, -2.0, 0.25 }), KernelSpec(f, 0.8), ScaleFactors::ones(3));
    EXPECT_NEAR(q.q_hat, 0.0, 1e-12);
  }
}

TEST(EstimateQ, CopiedColumnIsPositive)
{
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  std::vector<double> x(200);
  for (auto& v : x)
    v = normal(rng);
  const auto s = Sample::from_columns({ x, x });
  EXPECT_GT(estimate_q(s, gauss1, ScaleFactors::ones(2)).q_hat, 0.0);
}

TEST(EstimateQ, NeedsTwoObservations)
{
  EXPECT_THROW(estimate_q(Sample::from_rows({ { 1.0, 2.0 } }), gauss1, ScaleFactors::ones(2)),
               SampleTooSmall);
}

TEST(EstimateQ, DefaultScaleIsSampleStdDev)
{
  const auto s = random_sample(30, 2, 8);
  EXPECT_EQ(estimate_q(s, gauss1).q_hat,
            estimate_q(s, gauss1, sample_scale_factors(s)).q_hat);
  EXPECT_THROW(estimate_q(identical_rows(5, { 1.0, 2.0 }), gauss1), ZeroVariance);
}

TEST(EstimateQ, MatchesNaiveTranscription)
{
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> n_dist(2, 64), k_dist(2, 4);
  std::uniform_real_distribution<double> h_dist(0.3, 3.0);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto n = n_dist(rng);
    const auto k = k_dist(rng);
    const auto s = random_sample(n, k, rng());
    const KernelSpec kernel(all_kernel_families[inst % 3], h_dist(rng));
    std::vector<double> sig(k);
    for (auto& v : sig)
      v = 0.5 + h_dist(rng);
    const auto sf = ScaleFactors::user(sig);
    worst = std::max(worst, std::abs(estimate_q(s, kernel, sf).q_hat - naive_q(s, kernel, sf)));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(EstimateQ, TranslationInvariance)
{
  const auto s = random_sample(40, 3, 21);
  auto shifted = s.column_major();
  const double shift[3] = { 3.25, -7.5, 1e3 };
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 40; ++i)
      shifted[k * 40 + i] += shift[k];
  for (auto f : all_kernel_families) {
    const KernelSpec kernel(f, 0.9);
    const auto sf = ScaleFactors::user({ 1.0, 2.0, 0.5 });
    EXPECT_NEAR(estimate_q(s, kernel, sf).q_hat,
                estimate_q(Sample(40, 3, shifted), kernel, sf).q_hat, 1e-12);
  }
}

TEST(EstimateQ, ScaleInvarianceWithSampleStdDev)
{
  const auto s = random_sample(40, 2, 22);
  auto scaled = s.column_major();
  for (std::size_t i = 0; i < 40; ++i) {
    scaled[i] *= -3.0;
    scaled[40 + i] *= 0.01;
  }
  for (auto f : all_kernel_families) {
    const KernelSpec kernel(f, 1.1);
    EXPECT_NEAR(estimate_q(s, kernel).q_hat, estimate_q(Sample(40, 2, scaled), kernel).q_hat,
                1e-12);
  }
}

TEST(EstimateQ, RowAndColumnPermutationInvariance)
{
  const auto s = random_sample(30, 3, 23);
  std::vector<std::size_t> order(30);
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(4));
  std::vector<std::vector<double>> rows, swapped;
  for (auto i : order) {
    rows.push_back(s.row(i));
    swapped.push_back({ s(i, 2), s(i, 0), s(i, 1) });
  }
  const auto sf = ScaleFactors::ones(3);
  const double base = estimate_q(s, gauss1, sf).q_hat;
  EXPECT_NEAR(estimate_q(Sample::from_rows(rows), gauss1, sf).q_hat, base, 1e-12);
  EXPECT_NEAR(estimate_q(Sample::from_rows(swapped), gauss1, sf).q_hat, base, 1e-12);
}

TEST(EstimateQ, Nonnegative)
{
  for (int inst = 0; inst < 60; ++inst) {
    const auto s = random_sample(3 + inst % 20, 2 + inst % 3, 300 + inst, inst % 2 ? 0.0 : 1.0);
    const KernelSpec kernel(all_kernel_families[inst % 3], 0.2 + 0.1 * inst);
    EXPECT_GE(estimate_q(s, kernel, ScaleFactors::ones(s.k())).q_hat, -1e-12);
  }
}

TEST(EstimateQCf, TwoPointExample)
{
  const auto s = two_point_sample();
  EXPECT_NEAR(estimate_q_cf(s, gauss1, ScaleFactors::ones(2)),
              estimate_q(s, gauss1, ScaleFactors::ones(2)).q_hat, 1e-6);
}

TEST(EstimateQCf, IdenticalRowsGiveZero)
{
  EXPECT_NEAR(estimate_q_cf(identical_rows(6, { 0.4, 1.0 }), gauss1, ScaleFactors::ones(2)), 0.0,
              1e-10);
}

TEST(EstimateQCf, SquareCauchySmallSample)
{
  const auto s = random_sample(8, 2, 31);
  const KernelSpec kernel(KernelFamily::square_cauchy, 1.0);
  EXPECT_NEAR(estimate_q_cf(s, kernel, ScaleFactors::ones(2)),
              estimate_q(s, kernel, ScaleFactors::ones(2)).q_hat, 1e-5);
}

TEST(EstimateQCf, EveryFamilyAgrees)
{
  for (auto f : all_kernel_families) {
    const auto s = random_sample(20, 2, 32);
    const KernelSpec kernel(f, 0.7);
    const auto sf = ScaleFactors::user({ 1.3, 0.8 });
    EXPECT_NEAR(estimate_q_cf(s, kernel, sf), estimate_q(s, kernel, sf).q_hat, 1e-5)
      << to_string(f);
  }
}

TEST(EstimateQCf, Guards)
{
  EXPECT_THROW(estimate_q_cf(random_sample(10, 3, 1), gauss1, ScaleFactors::ones(3)),
               std::invalid_argument);
  EXPECT_THROW(estimate_q_cf(random_sample(65, 2, 1), gauss1, ScaleFactors::ones(2)),
               std::invalid_argument);
  QuadratureSettings loose;
  loose.tail_threshold = 1e-2;
  EXPECT_THROW(estimate_q_cf(random_sample(10, 2, 1), gauss1, ScaleFactors::ones(2), loose),
               TruncationTooTight);
}

TEST(QGradient, MatchesFiniteDifferences)
{
  for (auto f : all_kernel_families) {
    const auto s = random_sample(4, 2, 41);
    const KernelSpec kernel(f, 0.9);
    const auto sf = ScaleFactors::user({ 1.2, 0.7 });
    const auto g = q_gradient(s, kernel, sf);
    for (std::size_t idx = 0; idx < 8; ++idx) {
      auto plus = s.column_major();
      auto minus = s.column_major();
      const double step = 1e-6 * (1.0 + std::abs(plus[idx]));
      plus[idx] += step;
      minus[idx] -= step;
      const double fd = (estimate_q(Sample(4, 2, plus), kernel, sf).q_hat -
                         estimate_q(Sample(4, 2, minus), kernel, sf).q_hat) /
                        (2.0 * step);
      EXPECT_NEAR(g[idx], fd, 1e-5 * std::max(1.0, std::abs(fd))) << to_string(f) << " " << idx;
    }
  }
}

TEST(QGradient, OddUnderNegation)
{
  const auto s = random_sample(12, 3, 42);
  auto neg = s.column_major();
  for (auto& v : neg)
    v = -v;
  const auto sf = ScaleFactors::ones(3);
  const auto g = q_gradient(s, gauss1, sf);
  const auto gn = q_gradient(Sample(12, 3, neg), gauss1, sf);
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_NEAR(g[i], -gn[i], 1e-14);
}

TEST(QGradient, SmallerUnderIndependence)
{
  const auto dep = random_sample(300, 2, 43, 2.0);
  const auto ind = random_sample(300, 2, 44, 0.0);
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v)
      s += x * x;
    return std::sqrt(s);
  };
  EXPECT_LT(norm(q_gradient(ind, gauss1, sample_scale_factors(ind))),
            norm(q_gradient(dep, gauss1, sample_scale_factors(dep))));
}
