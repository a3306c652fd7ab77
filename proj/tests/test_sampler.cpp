#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hbrnorm/diagnostics.hpp"
#include "hbrnorm/error.hpp"
#include "hbrnorm/log_density.hpp"
#include "hbrnorm/nuts.hpp"
#include "oracles.hpp"

using namespace hbrnorm;

namespace {

std::vector<std::vector<double>> iid_chains(std::size_t chains, std::size_t n, std::uint64_t seed, double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> out(chains, std::vector<double>(n));
  for (std::size_t c = 0; c < chains; ++c) {
    for (auto& v : out[c]) v = nd(rng) + (c == 0 ? shift : 0.0);
  }
  return out;
}

// AR(1) chains with coefficient rho; integrated autocorrelation time (1+rho)/(1-rho).
std::vector<std::vector<double>> ar1_chains(std::size_t chains, std::size_t n, double rho, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> out(chains, std::vector<double>(n));
  for (auto& c : out) {
    double x = nd(rng);
    for (auto& v : c) {
      x = rho * x + std::sqrt(1 - rho * rho) * nd(rng);
      v = x;
    }
  }
  return out;
}

}  // namespace

TEST(Diagnostics, ConstantChainsHaveUnitRhat) {
  std::vector<std::vector<double>> c(4, std::vector<double>(100, 2.5));
  EXPECT_DOUBLE_EQ(split_rhat(c), 1.0);
}

TEST(Diagnostics, IidChainsHaveRhatNearOneAndFullEss) {
  const auto c = iid_chains(4, 1000, 11);
  EXPECT_LT(split_rhat(c), 1.01);
  const double ess = ess_bulk(c);
  EXPECT_GT(ess, 3200.0);
  EXPECT_LT(ess, 4800.0);
}

TEST(Diagnostics, ShiftedChainIsFlagged) {
  EXPECT_GT(split_rhat(iid_chains(4, 500, 5, 1.0)), 1.05);
}

TEST(Diagnostics, Ar1EssMatchesAutocorrelationTime) {
  const double rho = 0.8;
  const auto c = ar1_chains(4, 5000, rho, 3);
  const double expected = 4 * 5000 * (1 - rho) / (1 + rho);
  EXPECT_NEAR(ess_basic(c) / expected, 1.0, 0.15);
  EXPECT_NEAR(ess_bulk(c) / expected, 1.0, 0.15);
}

TEST(Nuts, LeapfrogIsReversible) {
  StandardNormalDensity d(3);
  std::vector<double> q{0.3, -1.2, 2.0}, p{0.5, 0.1, -0.7}, inv{1.0, 0.5, 2.0};
  const auto q0 = q, p0 = p;
  leapfrog(d, q, p, inv, 0.1, 25);
  for (auto& v : p) v = -v;
  leapfrog(d, q, p, inv, 0.1, 25);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(q[i], q0[i], 1e-10);
    EXPECT_NEAR(-p[i], p0[i], 1e-10);
  }
}

TEST(Nuts, StandardNormalMoments) {
  StandardNormalDensity d(5);
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 500;
  cfg.draws = 1000;
  cfg.seed = 7;
  const PosteriorDraws draws = sample_nuts(d, cfg);
  const DiagnosticsReport rep = diagnostics(draws);
  EXPECT_LT(rep.max_rhat, 1.01);
  EXPECT_EQ(rep.divergences, 0u);
  for (std::size_t k = 0; k < 5; ++k) {
    const double se = 1.0 / std::sqrt(rep.ess_bulk[k]);
    EXPECT_NEAR(draws.mean(k), 0.0, 4 * se);
    EXPECT_NEAR(draws.sd(k), 1.0, 0.1);
  }
}

TEST(Nuts, ConjugatePosterior) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd(1.5, 2.0);
  std::vector<double> y(40);
  for (auto& v : y) v = nd(rng);
  oracle::ConjugateNormalMean d(y, 2.0, 0.0, 3.0);
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.seed = 2;
  const PosteriorDraws draws = sample_nuts(d, cfg);
  const DiagnosticsReport rep = diagnostics(draws);
  const double sd = std::sqrt(d.posterior_variance());
  EXPECT_NEAR(draws.mean(0), d.posterior_mean(), 4 * sd / std::sqrt(rep.ess_bulk[0]));
  EXPECT_NEAR(draws.sd(0), sd, 0.1 * sd);
}

TEST(Nuts, DeterministicUnderSeedAndThreads) {
  StandardNormalDensity d(2);
  SamplerConfig cfg;
  cfg.warmup = 200;
  cfg.draws = 200;
  cfg.seed = 99;
  const PosteriorDraws a = sample_nuts(d, cfg);
  cfg.threads = 2;
  const PosteriorDraws b = sample_nuts(d, cfg);
  EXPECT_EQ(a.values, b.values);
  cfg.seed = 100;
  const PosteriorDraws c = sample_nuts(d, cfg);
  EXPECT_NE(a.values, c.values);
}

TEST(Nuts, RejectsBadConfig) {
  StandardNormalDensity d(1);
  SamplerConfig cfg;
  cfg.chains = 0;
  EXPECT_THROW(sample_nuts(d, cfg), Error);
  cfg.chains = 2;
  cfg.target_accept = 1.5;
  EXPECT_THROW(sample_nuts(d, cfg), Error);
}
