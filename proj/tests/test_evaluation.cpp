#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "hbrnorm/error.hpp"
#include "hbrnorm/evaluation.hpp"

using namespace hbrnorm;

namespace {

Eigen::VectorXd normals(std::size_t n, std::mt19937_64& rng, double mean = 0.0, double sd = 1.0) {
  std::normal_distribution<double> nd(mean, sd);
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = nd(rng);
  return v;
}

}  // namespace

TEST(Metrics, PerfectPrediction) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd y = normals(50, rng);
  const MetricReport r = regression_metrics(y, Eigen::MatrixXd::Constant(50, 1, 0.3), y, Eigen::VectorXd::Zero(1),
                                            Eigen::VectorXd::Ones(1));
  EXPECT_DOUBLE_EQ(r.smse(0), 0.0);
  EXPECT_NEAR(*r.rho[0], 1.0, 1e-12);
}

TEST(Metrics, TrivialPredictorHasZeroMsll) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd y = normals(20000, rng, 3.0, 2.0);
  const MetricReport r = regression_metrics(Eigen::MatrixXd::Constant(20000, 1, 3.0), Eigen::MatrixXd::Constant(20000, 1, 2.0),
                                            y, Eigen::VectorXd::Constant(1, 3.0), Eigen::VectorXd::Constant(1, 4.0));
  EXPECT_NEAR(r.smse(0), 1.0, 0.03);
  EXPECT_NEAR(r.msll(0), 0.0, 1e-12);
  EXPECT_FALSE(r.rho[0].has_value());
}

TEST(Metrics, TrueModelMsllMatchesClosedForm) {
  // y = 2x + e, sd 0.5, x ~ N(0,1): s_train^2 = 4.25
  std::mt19937_64 rng(3);
  const std::size_t n = 20000;
  const Eigen::VectorXd x = normals(n, rng);
  const Eigen::VectorXd y = 2.0 * x + normals(n, rng, 0.0, 0.5);
  const MetricReport r = regression_metrics(2.0 * x, Eigen::MatrixXd::Constant(n, 1, 0.5), y, Eigen::VectorXd::Zero(1),
                                            Eigen::VectorXd::Constant(1, 4.25));
  EXPECT_NEAR(r.msll(0), -0.5 * (std::log(4.25) - std::log(0.25)), 0.05);
}

TEST(Metrics, ScaleInvariance) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd y = normals(100, rng), mu = normals(100, rng, 0.0, 0.5);
  const Eigen::MatrixXd sd = Eigen::MatrixXd::Constant(100, 1, 0.8);
  const Eigen::VectorXd m = Eigen::VectorXd::Constant(1, 0.1), v = Eigen::VectorXd::Constant(1, 1.3);
  const double c = 7.5;
  const MetricReport a = regression_metrics(mu, sd, y, m, v);
  const MetricReport b = regression_metrics(c * mu, c * sd, c * y, c * m, c * c * v);
  EXPECT_NEAR(a.smse(0), b.smse(0), 1e-10);
  EXPECT_NEAR(a.msll(0), b.msll(0), 1e-10);
}

TEST(Metrics, RejectsNonPositiveSd) {
  const Eigen::MatrixXd y = Eigen::MatrixXd::Ones(3, 1);
  EXPECT_THROW(regression_metrics(y, Eigen::MatrixXd::Zero(3, 1), y, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)),
               Error);
}

TEST(Median, OddAndEven) {
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}

TEST(Auc, HandComputedAndTies) {
  Eigen::VectorXd h(3), p(2);
  h << 0.1, 0.5, 0.9;
  p << 0.5, 1.0;
  // pairs won: (0.5 vs .1,.5,.9) = 1 + 0.5 + 0; (1.0) = 3 -> 4.5 / 6
  EXPECT_NEAR(auc(h, p), 0.75, 1e-15);
}

TEST(Auc, Antisymmetry) {
  std::mt19937_64 rng(5);
  const Eigen::VectorXd a = normals(37, rng), b = normals(23, rng, 0.4);
  EXPECT_NEAR(auc(a, b), 1.0 - auc(b, a), 1e-14);
}

namespace {

GroupedDeviations grouped(const Eigen::MatrixXd& healthy, const Eigen::MatrixXd& patients) {
  GroupedDeviations g;
  g.z.resize(healthy.rows() + patients.rows(), healthy.cols());
  g.z << healthy, patients;
  g.groups.assign(static_cast<std::size_t>(healthy.rows()), healthy_group);
  g.groups.resize(g.groups.size() + static_cast<std::size_t>(patients.rows()), "patient:dx");
  return g;
}

Eigen::MatrixXd normal_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

}  // namespace

TEST(Anomaly, PermutationPValueIsSuperUniform) {
  std::mt19937_64 rng(6);
  std::vector<double> ps;
  for (int sim = 0; sim < 200; ++sim) {
    const GroupedDeviations g = grouped(normal_matrix(30, 1, rng), normal_matrix(12, 1, rng));
    AnomalyOptions o;
    o.permutations = 199;
    o.seed = static_cast<std::uint64_t>(sim);
    ps.push_back(anomaly_auc(std::vector<GroupedDeviations>{g}, {"u"}, o).diagnoses.at("dx")[0].p[0]);
  }
  for (double a : {0.05, 0.1, 0.25, 0.5}) {
    const double frac = static_cast<double>(std::count_if(ps.begin(), ps.end(), [&](double p) { return p <= a; })) / 200.0;
    // binomial slack of about three standard errors
    EXPECT_LE(frac, a + 3 * std::sqrt(a * (1 - a) / 200.0)) << a;
  }
  for (double p : ps) {
    EXPECT_GT(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(Anomaly, PlantedUnitsAreStable) {
  std::mt19937_64 rng(7);
  std::vector<GroupedDeviations> reps;
  for (int r = 0; r < 10; ++r) {
    Eigen::MatrixXd patients = normal_matrix(40, 30, rng);
    for (int u : {4, 13, 22}) patients.col(u).array() += 1.5;
    reps.push_back(grouped(normal_matrix(100, 30, rng), patients));
  }
  std::vector<std::string> names;
  for (int u = 0; u < 30; ++u) names.push_back("u" + std::to_string(u));
  AnomalyOptions o;
  o.seed = 3;
  const AnomalyReport rep = anomaly_auc(reps, names, o);
  EXPECT_EQ(rep.stable_units("dx"), (std::vector<std::size_t>{4, 13, 22}));
  EXPECT_EQ(rep.diagnoses.at("dx")[4].direction, 1);
  for (const auto& u : rep.diagnoses.at("dx")) {
    if (u.stable) EXPECT_EQ(u.significant, 10u);
    for (double a : u.auc) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
    }
  }
}

TEST(Anomaly, ExchangeableGroupsAreNotFlagged) {
  std::mt19937_64 rng(8);
  const GroupedDeviations g = grouped(normal_matrix(200, 1, rng), normal_matrix(200, 1, rng));
  const AnomalyReport rep = anomaly_auc(g, {"u"}, 1, AnomalyOptions{});
  EXPECT_NEAR(rep.diagnoses.at("dx")[0].auc[0], 0.5, 0.08);
}

TEST(Anomaly, PreconditionErrors) {
  std::mt19937_64 rng(9);
  const GroupedDeviations small = grouped(normal_matrix(10, 1, rng), normal_matrix(2, 1, rng));
  EXPECT_THROW(anomaly_auc(small, {"u"}, 1), Error);
  AnomalyOptions few;
  few.permutations = 50;
  EXPECT_THROW(anomaly_auc(grouped(normal_matrix(10, 1, rng), normal_matrix(10, 1, rng)), {"u"}, 1, few), Error);
}

TEST(SiteProbe, NoSignalIsAtChance) {
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd z = normal_matrix(800, 5, rng);
  std::vector<std::string> labels;
  for (int i = 0; i < 800; ++i) labels.push_back("s" + std::to_string(i % 4));
  const SiteProbeResult r = site_probe(z, labels);
  EXPECT_DOUBLE_EQ(r.chance, 0.25);
  EXPECT_LT(std::abs(r.balanced_accuracy - r.chance), 2 * r.chance_se);
}

TEST(SiteProbe, ShiftedSitesAreDetected) {
  std::mt19937_64 rng(11);
  Eigen::MatrixXd z = normal_matrix(400, 3, rng);
  std::vector<std::string> labels;
  for (int i = 0; i < 400; ++i) {
    labels.push_back("s" + std::to_string(i % 4));
    if (i % 4 > 0) z(i, i % 4 - 1) += 1.5;
  }
  const SiteProbeResult r = site_probe(z, labels);
  EXPECT_GT(r.balanced_accuracy, 0.4);
  EXPECT_LT(r.p_value, 0.01);
}

TEST(SiteProbe, FoldInfeasibility) {
  std::mt19937_64 rng(12);
  const Eigen::MatrixXd z = normal_matrix(12, 2, rng);
  std::vector<std::string> labels(12, "a");
  for (int i = 0; i < 4; ++i) labels[static_cast<std::size_t>(i)] = "b";
  EXPECT_THROW(site_probe(z, labels), Error);
}
