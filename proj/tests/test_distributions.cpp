#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <vector>

#include "hbrnorm/distributions.hpp"
#include "hbrnorm/error.hpp"
#include "hbrnorm/param_layout.hpp"

using namespace hbrnorm;

TEST(Softplus, MatchesDirectFormulaAndStaysFinite) {
  for (double t : {-20.0, -3.0, -0.5, 0.0, 0.7, 4.0, 20.0}) {
    EXPECT_NEAR(softplus(t), std::log1p(std::exp(t)), 1e-14 * std::max(1.0, std::abs(t)));
  }
  EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
  EXPECT_GT(softplus(-800.0), -1.0);
  EXPECT_NEAR(log_softplus(-50.0), -50.0, 1e-12);
}

TEST(NormalQuantile, AgreesWithBoost) {
  boost::math::normal n;
  for (double p : {1e-10, 0.001, 0.025, 0.3, 0.5, 0.8, 0.975, 0.999999}) {
    EXPECT_NEAR(normal_quantile(p), boost::math::quantile(n, p), 1e-9) << p;
  }
}

TEST(TwoSidedP, KnownValues) {
  EXPECT_NEAR(two_sided_p(1.959963984540054), 0.05, 1e-12);
  EXPECT_DOUBLE_EQ(two_sided_p(0.0), 1.0);
  EXPECT_DOUBLE_EQ(two_sided_p(-1.3), two_sided_p(1.3));
}

namespace {

void check_derivative(const Prior& p, double x) {
  double d = 0.0, tmp = 0.0;
  p.log_density(x, d);
  const double h = 1e-6 * std::max(1.0, std::abs(x));
  const double fd = (p.log_density(x + h, tmp) - p.log_density(x - h, tmp)) / (2 * h);
  EXPECT_NEAR(d, fd, 1e-6 * std::max(1.0, std::abs(fd))) << p.describe() << " at " << x;
}

}  // namespace

TEST(Prior, NormalisedDensities) {
  double d;
  EXPECT_NEAR(Prior::normal(1.0, 2.0).log_density(1.0, d), -0.5 * log_two_pi - std::log(2.0), 1e-14);
  // half-Cauchy(s) at s is 1 / (pi s)
  EXPECT_NEAR(Prior::half_cauchy(5.0).log_density(5.0, d), std::log(1.0 / (M_PI * 5.0)), 1e-14);
  EXPECT_NEAR(Prior::uniform(0.0, 100.0).log_density(3.0, d), -std::log(100.0), 1e-14);
  // log-normal(0, 1) at 1 is 1/sqrt(2 pi)
  EXPECT_NEAR(Prior::log_normal(0.0, 1.0).log_density(1.0, d), -0.5 * log_two_pi, 1e-14);
}

TEST(Prior, OutsideSupportIsMinusInfinity) {
  double d;
  EXPECT_EQ(Prior::half_cauchy(1.0).log_density(-0.1, d), -INFINITY);
  EXPECT_EQ(Prior::uniform(0.0, 1.0).log_density(1.5, d), -INFINITY);
  EXPECT_EQ(Prior::log_normal(0.0, 1.0).log_density(0.0, d), -INFINITY);
}

TEST(Prior, DerivativesMatchFiniteDifferences) {
  check_derivative(Prior::normal(0.3, 1.7), -2.0);
  check_derivative(Prior::half_cauchy(5.0), 3.1);
  check_derivative(Prior::log_normal(-1.0, 0.4), 0.6);
  check_derivative(Prior::uniform(0.0, 100.0), 42.0);
}

TEST(Prior, FamilyNamesRoundTrip) {
  for (auto f : {Prior::Family::normal, Prior::Family::half_cauchy, Prior::Family::log_normal, Prior::Family::uniform}) {
    EXPECT_EQ(Prior::family_from_name(Prior::family_name(f)), f);
  }
  EXPECT_THROW(Prior::family_from_name("gamma"), Error);
}

TEST(ParamLayout, ConstrainRoundTripAndSupports) {
  ParamLayout l;
  l.add("a", 2);
  l.add("b", 1, Support::positive);
  l.add("c", 2, Support::interval, 0.0, 100.0);
  ASSERT_EQ(l.dim(), 5u);
  std::vector<double> u{-1.2, 0.4, -3.0, 0.0, 5.0}, x(5), back(5);
  l.constrain(u, x);
  EXPECT_GT(x[2], 0.0);
  EXPECT_GT(x[3], 0.0);
  EXPECT_LT(x[4], 100.0);
  EXPECT_NEAR(x[3], 50.0, 1e-12);
  l.unconstrain(x, back);
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(back[i], u[i], 1e-10);
  EXPECT_EQ(l.element_name(4), "c[1]");
  EXPECT_EQ(l.owner(2).name, "b");
}

TEST(ParamLayout, LogJacobianMatchesFiniteDifferenceOfTransform) {
  ParamLayout l;
  l.add("b", 1, Support::positive);
  l.add("c", 1, Support::interval, -2.0, 3.0);
  std::vector<double> u{0.3, -0.8}, dx(2), dlogj(2);
  l.log_jacobian(u, dx, dlogj);
  for (std::size_t i = 0; i < 2; ++i) {
    const double h = 1e-6;
    std::vector<double> up = u, dn = u, xu(2), xd(2);
    up[i] += h;
    dn[i] -= h;
    l.constrain(up, xu);
    l.constrain(dn, xd);
    EXPECT_NEAR(dx[i], (xu[i] - xd[i]) / (2 * h), 1e-8);
    std::vector<double> t1(2), t2(2);
    const double lu = l.log_jacobian(up, t1, t2);
    const double ld = l.log_jacobian(dn, t1, t2);
    EXPECT_NEAR(dlogj[i], (lu - ld) / (2 * h), 1e-6);
  }
}
