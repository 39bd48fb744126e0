#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "glue/analysis.hpp"
#include "oracles.hpp"

using namespace glue;

TEST(CostModel, Substitution) {
  const auto c = cost_model({1.0, 2.0, 0.1, 0.1});
  EXPECT_NEAR(c.t_full, 3.2, 1e-15);
  EXPECT_NEAR(c.t_spsa, 2.2, 1e-15);
  EXPECT_NEAR(c.gap, 1.0, 1e-15);
}

TEST(CostModel, GapIsDifferenceOfTotals) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int i = 0; i < 100; ++i) {
    const CostModel cm{u(rng), 1.0 + u(rng), u(rng), u(rng)};
    const auto c = cost_model(cm);
    EXPECT_NEAR(c.gap, c.t_full - c.t_spsa, 1e-12);
  }
}

TEST(CostModel, BreakEvenClosesTheGap) {
  CostModel cm{1.5, 2.5, 0.0, 0.3};
  cm.c_mix = break_even_c_mix(cm);
  EXPECT_NEAR(cost_model(cm).gap, 0.0, 1e-12);
}

TEST(CostModel, RejectsInvalidCosts) {
  EXPECT_THROW(cost_model({-1.0, 2.0, 0.0, 0.0}), ConfigError);
  EXPECT_THROW(cost_model({1.0, 0.5, 0.0, 0.0}), ConfigError);
}

TEST(CostFit, RecoversSyntheticUnitCosts) {
  const double f = 2e-3, b = 5e-3, mix = 4e-4, ip = 1e-5;
  std::vector<TimingSample> samples;
  for (auto [nf, nb, nm, ni] : std::vector<std::array<std::uint64_t, 4>>{
           {10, 0, 0, 0}, {10, 10, 0, 0}, {0, 0, 10, 0}, {0, 0, 0, 40}, {20, 0, 20, 0}, {10, 10, 10, 40}}) {
    PassCounters c{nf, nb, nm, ni};
    samples.push_back({c, nf * f + nb * b + nm * mix + ni * ip});
  }
  const auto cm = fit_cost_model(samples, 4);
  EXPECT_NEAR(cm.forward, f, 1e-12);
  EXPECT_NEAR(cm.gamma, b / f, 1e-9);
  EXPECT_NEAR(cm.c_mix, mix, 1e-12);
  EXPECT_NEAR(cm.d_alpha, 4 * ip, 1e-12);
  EXPECT_THROW(fit_cost_model(std::span<const TimingSample>(samples.data(), 3), 4), ConfigError);
}

TEST(CostFit, MeasuredWorkloadsCarryExpectedCounts) {
  const ArchSpec arch({6, 8, 3});
  const ExpertBank bank(arch, {oracle::random_params(arch, 1), oracle::random_params(arch, 2)});
  const auto samples = measure_costs(bank, oracle::random_batch(16, 6, 3, 3), 5);
  ASSERT_EQ(samples.size(), 6u);
  EXPECT_EQ(samples[0].counts.forwards, 5u);
  EXPECT_EQ(samples[1].counts.backwards, 5u);
  EXPECT_EQ(samples[2].counts.blends, 5u);
  EXPECT_EQ(samples[3].counts.inner_products, 10u);
  EXPECT_EQ(samples[4].counts.forwards, 10u);
  EXPECT_EQ(samples[4].counts.backwards, 0u);
  EXPECT_EQ(samples[5].counts.backwards, 5u);
  const auto cm = fit_cost_model(samples, 2);
  EXPECT_GT(cm.forward, 0.0);
  EXPECT_GE(cm.gamma, 1.0);
}

TEST(VarianceBound, Examples) {
  EXPECT_EQ(variance_bound(1, 1, 3.0, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(variance_bound(2, 1, 1.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(variance_bound(5, 2, 1.3, 0.7), 0.5 * variance_bound(5, 1, 1.3, 0.7));
  EXPECT_THROW(variance_bound(0, 1, 1.0, 1.0), ConfigError);
  EXPECT_THROW(variance_bound(2, 0, 1.0, 1.0), ConfigError);
}

TEST(VarianceBound, MonotoneInMAndK) {
  for (std::size_t k = 1; k < 12; ++k) {
    for (std::size_t m = 1; m < 12; ++m) {
      EXPECT_LE(variance_bound(k, m + 1, 1.7, 0.9), variance_bound(k, m, 1.7, 0.9));
      EXPECT_GE(variance_bound(k + 1, m, 1.7, 0.9), variance_bound(k, m, 1.7, 0.9));
    }
  }
}

TEST(MseFactor, SingleDirectionMatchesProofIdentity) {
  for (std::size_t k : {1u, 2u, 4u, 8u}) {
    const double kk = static_cast<double>(k);
    EXPECT_NEAR(estimator_mse_factor(k, 1, false), (kk - 1) / kk, 1e-15);
    EXPECT_NEAR(estimator_mse_factor(k, 1, true), kk - 1, 1e-15);
  }
}

namespace {
// E||g_bar - g||^2 for a linear objective by direct moments of u:
// E[u u^T] = I/K and E[(g^T u)^2 ||u||^2] = ||g||^2 / K for unit u.
double moment_oracle(std::size_t k, std::size_t m, bool scaling, double g2) {
  const double kk = static_cast<double>(k), mm = static_cast<double>(m);
  const double c = scaling ? kk : 1.0;
  const double mean_sq = c * c * g2 / (kk * kk);  // ||E g_bar||^2
  const double second = c * c * (g2 / kk) / mm + (1.0 - 1.0 / mm) * mean_sq;  // E||g_bar||^2
  const double cross = c * g2 / kk;  // E[g_bar^T g]
  return second - 2.0 * cross + g2;
}
}  // namespace

TEST(MseFactor, AgreesWithMomentOracle) {
  for (std::size_t k : {1u, 2u, 4u, 8u}) {
    for (std::size_t m : {1u, 2u, 4u, 16u}) {
      for (bool s : {false, true}) {
        EXPECT_NEAR(estimator_mse_factor(k, m, s), moment_oracle(k, m, s, 1.0), 1e-12);
      }
    }
  }
}

class LinearMonteCarlo : public ::testing::TestWithParam<std::pair<std::size_t, std::size_t>> {};

TEST_P(LinearMonteCarlo, EmpiricalMseMatchesClosedForm) {
  const auto [k, m] = GetParam();
  std::vector<double> g(k);
  for (std::size_t i = 0; i < k; ++i) g[i] = (i % 2 ? -1.0 : 1.0) * (1.0 + 0.1 * static_cast<double>(i));
  auto f = [&](std::span<const double> z) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += g[i] * z[i];
    return s;
  };
  SpsaConfig spsa;
  spsa.m = m;
  std::mt19937_64 rng(100 + k * 10 + m);
  const std::vector<double> x(k, 0.0);
  const auto est = mc_variance(f, x, g, spsa, 100'000, rng);
  EXPECT_NEAR(est.empirical_mse, est.exact_mse, 0.03 * est.exact_mse);
  if (m == 1) EXPECT_NEAR(est.reference_mse, est.exact_mse, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, LinearMonteCarlo,
                         ::testing::Values(std::pair<std::size_t, std::size_t>{2, 1},
                                           std::pair<std::size_t, std::size_t>{4, 1},
                                           std::pair<std::size_t, std::size_t>{4, 4},
                                           std::pair<std::size_t, std::size_t>{8, 1}));

TEST(McVariance, ScaledEstimatorIsUnbiased) {
  const std::vector<double> g{1.0, -0.8, 1.2, -1.1};
  auto f = [&](std::span<const double> z) {
    return g[0] * z[0] + g[1] * z[1] + g[2] * z[2] + g[3] * z[3];
  };
  SpsaConfig spsa;
  spsa.dimension_scaling = true;
  std::mt19937_64 rng(7);
  const auto est = mc_variance(f, std::vector<double>(4, 0.0), g, spsa, 100'000, rng);
  const double gn = std::sqrt(est.grad_norm_sq);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(est.mean_estimate[i], g[i], 0.03 * gn);
  EXPECT_NEAR(est.empirical_mse, 3.0 * est.grad_norm_sq, 0.03 * 3.0 * est.grad_norm_sq);
}

TEST(McVariance, IdenticalExpertsHaveZeroError) {
  const ArchSpec arch({4, 5, 3});
  const auto p = oracle::random_params(arch, 1);
  const ExpertBank bank(arch, {p, p, p});
  std::mt19937_64 rng(2);
  SpsaConfig spsa;
  spsa.mu = 1e-3;
  const auto r = mc_variance(bank, std::vector<double>{0.1, 0.2, -0.3}, oracle::random_batch(8, 4, 3, 3),
                             spsa, 1000, rng);
  for (double v : r.exact_grad_beta) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_LE(r.estimate.empirical_mse, 1e-20);
}

TEST(McVariance, RequiresEnoughSamples) {
  auto f = [](std::span<const double> z) { return z[0]; };
  std::mt19937_64 rng(1);
  EXPECT_THROW(mc_variance(f, std::vector<double>{0.0}, std::vector<double>{1.0}, {}, 999, rng),
               ConfigError);
}

TEST(BiasSlope, QuarticIsSecondOrder) {
  auto f = [](std::span<const double> z) { return std::pow(z[0], 4); };
  std::mt19937_64 rng(3);
  const std::vector<double> mus{1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
  const auto fit = bias_slope(f, std::vector<double>{1.0}, std::vector<double>{4.0}, mus, 1, rng);
  EXPECT_FALSE(fit.exact);
  EXPECT_GE(fit.slope, 1.8);
  EXPECT_LE(fit.slope, 2.2);
}

TEST(BiasSlope, HalvingMuQuartersTheError) {
  auto f = [](std::span<const double> z) { return std::pow(z[0], 4); };
  std::mt19937_64 rng(4);
  const std::vector<double> mus{4e-2, 2e-2, 4e-4};
  const auto fit = bias_slope(f, std::vector<double>{1.0}, std::vector<double>{4.0}, mus, 1, rng);
  const double ratio = fit.errors[0] / fit.errors[1];
  EXPECT_GE(ratio, 3.5);
  EXPECT_LE(ratio, 4.5);
}

TEST(BiasSlope, QuadraticIsExact) {
  auto f = [](std::span<const double> z) { return 3 * z[0] * z[0] + z[0] * z[1] - 2 * z[1] * z[1] + z[0]; };
  const std::vector<double> x{0.5, -1.0};
  const std::vector<double> g{6 * 0.5 - 1.0 + 1.0, 0.5 + 4.0};
  std::mt19937_64 rng(5);
  const std::vector<double> mus{1e-1, 1e-2, 1e-3};
  const auto fit = bias_slope(f, x, g, mus, 20, rng);
  EXPECT_TRUE(fit.exact);
  EXPECT_TRUE(std::isnan(fit.slope));
  for (double e : fit.errors) EXPECT_LE(e, 1e-12);
}

TEST(BiasSlope, RejectsNarrowRadii) {
  auto f = [](std::span<const double> z) { return z[0]; };
  std::mt19937_64 rng(6);
  const std::vector<double> narrow{1e-2, 5e-3, 1e-3};
  EXPECT_THROW(bias_slope(f, std::vector<double>{0.0}, std::vector<double>{1.0}, narrow, 1, rng),
               ConfigError);
  const std::vector<double> two{1e-1, 1e-3};
  EXPECT_THROW(bias_slope(f, std::vector<double>{0.0}, std::vector<double>{1.0}, two, 1, rng),
               ConfigError);
}
