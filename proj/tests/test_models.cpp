#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hbrnorm/error.hpp"
#include "hbrnorm/models.hpp"
#include "hbrnorm/synthgen.hpp"
#include "oracles.hpp"

using namespace hbrnorm;

namespace {

Dataset small_data(std::uint64_t seed, std::size_t sites = 4, std::size_t n = 30, double hetero = 0.0) {
  GenConfig cfg;
  cfg.sites = sites;
  cfg.site_sizes = {n};
  cfg.units = 1;
  cfg.hetero_quadratic = hetero;
  return generate(cfg, seed).first;
}

FitOptions quick(std::uint64_t seed) {
  FitOptions o;
  o.sampler.warmup = 500;
  o.sampler.draws = 500;
  o.sampler.seed = seed;
  return o;
}

ModelSpec spec_of(Strategy s, NoiseForm noise = {}) {
  ModelSpec spec;
  spec.strategy = s;
  spec.noise = noise;
  return spec;
}

}  // namespace

TEST(PolynomialBasis, Layout) {
  Eigen::MatrixXd z(2, 2);
  z << 2, 3, -1, 0.5;
  const Eigen::MatrixXd b = polynomial_basis(z, 2);
  ASSERT_EQ(b.cols(), 5);
  EXPECT_DOUBLE_EQ(b(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(b(0, 2), 4.0);
  EXPECT_DOUBLE_EQ(b(0, 4), 9.0);
  EXPECT_DOUBLE_EQ(b(1, 3), 0.5);
}

TEST(ModelSpec, ParsesNoiseAndStrategy) {
  EXPECT_EQ(parse_noise_form("homo"), NoiseForm::homoscedastic());
  EXPECT_EQ(parse_noise_form("hetero:3"), NoiseForm::hetero(3));
  EXPECT_THROW(parse_noise_form("hetero:x"), Error);
  EXPECT_EQ(parse_strategy("nopool"), Strategy::no_pooling);
  EXPECT_THROW(parse_strategy("partial"), Error);
}

class GradientSuite : public ::testing::TestWithParam<int> {};

TEST_P(GradientSuite, AnalyticMatchesFiniteDifference) {
  const int variant = GetParam();
  const Strategy strategies[] = {Strategy::pooling, Strategy::no_pooling, Strategy::hbr};
  const Strategy s = strategies[variant % 3];
  const NoiseForm noise = variant >= 3 ? NoiseForm::hetero(2) : NoiseForm::homoscedastic();
  const Dataset ds = small_data(5, 4, 25, 0.5);
  auto d = build_density(spec_of(s, noise), ds, 0);
  std::mt19937_64 rng(100 + variant);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd u(static_cast<Eigen::Index>(d->dim()));
    for (auto& v : u) v = nd(rng);
    const LogpGrad lg = logp_and_grad(*d, {u.data(), d->dim()});
    const Eigen::VectorXd fd = oracle::fd_gradient(*d, u);
    EXPECT_LT(oracle::max_relative_error(lg.grad, fd), 1e-5) << strategy_name(s) << " " << noise_form_name(noise);
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, GradientSuite, ::testing::Range(0, 6));

TEST(NormativeDensity, SufficientStatisticsMatchRowLikelihood) {
  const Dataset ds = small_data(8);
  for (Strategy s : {Strategy::pooling, Strategy::no_pooling, Strategy::hbr}) {
    auto d = build_density(spec_of(s), ds, 0);
    const std::size_t n = d->dim();
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(0.0, 0.5);
    std::vector<double> u(n), x(n), g(n), dx(n), dl(n), pg(n, 0.0);
    for (auto& v : u) v = nd(rng);
    d->layout().constrain(u, x);
    const double total = d->log_density(u, g);
    const double prior = d->structure().log_prior(x, pg);
    const double logj = d->layout().log_jacobian(u, dx, dl);
    const double rows = d->row_log_likelihood(x, nullptr, nullptr);
    EXPECT_NEAR(total - prior - logj, rows, 1e-8 * std::abs(rows)) << strategy_name(s);
  }
}

TEST(Fit, PoolingPosteriorMeanMatchesOls) {
  const Dataset ds = small_data(3, 3, 80);
  const auto m = fit(spec_of(Strategy::pooling), ds, quick(1));
  const Standardizer& st = m.standardizer;
  const Eigen::MatrixXd z = st.transform_covariates(ds.covariates);
  Eigen::MatrixXd x(ds.rows(), 2);
  x.col(0).setOnes();
  x.col(1) = z.col(0);
  const Eigen::VectorXd beta = oracle::ols(x, st.transform_response(0, ds.responses.col(0)));
  const Eigen::MatrixXd draws = coefficient_draws(m, 0, 0);
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double sd = oracle::sd(draws.col(k));
    EXPECT_NEAR(draws.col(k).mean(), beta(k), 0.5 * sd + 1e-3);
  }
}

TEST(Fit, NoPoolingRejectsSingleRowBatch) {
  Dataset ds = small_data(2, 3, 20);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    if (ds.batch_labels[i] != "site03") rows.push_back(i);
  }
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    if (ds.batch_labels[i] == "site03") {
      rows.push_back(i);
      break;
    }
  }
  try {
    fit(spec_of(Strategy::no_pooling), ds.subset(rows), quick(1));
    FAIL() << "expected degenerate-data error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_data);
    EXPECT_NE(std::string(e.what()).find("site03"), std::string::npos);
  }
}

TEST(Fit, HbrNeedsTwoBatchesWithoutHyperpriors) {
  const Dataset ds = small_data(2, 1, 30);
  try {
    fit(spec_of(Strategy::hbr), ds, quick(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_data);
  }
}

TEST(Fit, UnitDrawsDoNotDependOnOtherUnits) {
  GenConfig cfg;
  cfg.sites = 3;
  cfg.site_sizes = {25};
  cfg.units = 3;
  const Dataset ds = generate(cfg, 4).first;
  FitOptions all = quick(5);
  all.sampler.warmup = 200;
  all.sampler.draws = 200;
  const auto a = fit(spec_of(Strategy::no_pooling), ds, all);
  FitOptions one = all;
  one.units = {1};
  one.jobs = 2;
  const auto b = fit(spec_of(Strategy::no_pooling), ds, one);
  ASSERT_EQ(b.units.size(), 1u);
  EXPECT_EQ(a.units[1].draws.values, b.units[0].draws.values);
}

TEST(Predict, UnknownBatchIsRejectedExceptForPooling) {
  const Dataset ds = small_data(6, 3, 25);
  FitOptions o = quick(2);
  o.sampler.warmup = 200;
  o.sampler.draws = 200;
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 1, 40.0);
  const auto nopool = fit(spec_of(Strategy::no_pooling), ds, o);
  try {
    predict(nopool, x, {"elsewhere"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unknown_batch);
  }
  const auto pool = fit(spec_of(Strategy::pooling), ds, o);
  EXPECT_NO_THROW(predict(pool, x, {"elsewhere"}));
}

TEST(Predict, VarianceIsAleatoricPlusEpistemic) {
  const Dataset ds = small_data(9, 2, 30);
  FitOptions o = quick(3);
  o.sampler.warmup = 200;
  o.sampler.draws = 200;
  const auto m = fit(spec_of(Strategy::no_pooling), ds, o);
  Eigen::MatrixXd x(1, 1);
  x << 50.0;
  const Prediction p = predict(m, x, {"site02"});
  // recompute from the draws on the standardized scale
  const Eigen::MatrixXd beta = coefficient_draws(m, 0, 1);
  const Eigen::VectorXd sigma = noise_sd_draws(m, 0, 1);
  const double z = m.standardizer.transform_covariates(x)(0, 0);
  const Eigen::VectorXd f = beta.col(0) + beta.col(1) * z;
  const double var = sigma.array().square().mean() + (f.array() - f.mean()).square().mean();
  const double s = m.standardizer.response_sd(0);
  EXPECT_NEAR(p.mean(0, 0), m.standardizer.response_mean(0) + s * f.mean(), 1e-10);
  EXPECT_NEAR(p.sd(0, 0), s * std::sqrt(var), 1e-10);
}

TEST(Deviations, ZAndTwoSidedP) {
  Prediction pred;
  pred.mean = Eigen::MatrixXd::Constant(2, 1, 1.0);
  pred.sd = Eigen::MatrixXd::Constant(2, 1, 2.0);
  Eigen::MatrixXd y(2, 1);
  y << 1.0 + 2.0 * 1.959963984540054, 1.0;
  const DeviationReport d = deviation_report(y, pred);
  EXPECT_NEAR(d.z(0, 0), 1.959963984540054, 1e-12);
  EXPECT_NEAR(d.p(0, 0), 0.05, 1e-12);
  EXPECT_DOUBLE_EQ(d.p(1, 0), 1.0);
}

TEST(RawCoefficients, InvertStandardization) {
  Standardizer s;
  s.covariate_mean = Eigen::VectorXd::Constant(1, 50.0);
  s.covariate_sd = Eigen::VectorXd::Constant(1, 20.0);
  s.response_mean = Eigen::VectorXd::Constant(1, 3.0);
  s.response_variance = Eigen::VectorXd::Constant(1, 4.0);
  Eigen::VectorXd beta(2);
  beta << 0.5, -1.0;
  const Eigen::VectorXd raw = raw_linear_coefficients(s, 0, beta);
  // y = 3 + 2 (0.5 - (x - 50)/20)
  EXPECT_NEAR(raw(1), -0.1, 1e-12);
  EXPECT_NEAR(raw(0), 3.0 + 2.0 * (0.5 + 2.5), 1e-12);
}
