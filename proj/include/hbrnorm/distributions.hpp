#ifndef HBRNORM_DISTRIBUTIONS_HPP
#define HBRNORM_DISTRIBUTIONS_HPP

#include <cmath>
#include <limits>
#include <string>

namespace hbrnorm {

inline constexpr double log_two_pi = 1.8378770664093454835606594728112;
inline constexpr double log_pi = 1.1447298858494001741434273513531;
inline constexpr double log_two = 0.69314718055994530941723212145818;

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
  if (t > 35.0) return t;
  if (t < -35.0) return std::exp(t);
  return std::log1p(std::exp(t));
}

/// log(softplus(t)), accurate for very negative t.
inline double log_softplus(double t) {
  if (t < -35.0) return t;
  return std::log(softplus(t));
}

inline double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Two-sided tail probability 2 (1 - Phi(|z|)).
inline double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

double normal_quantile(double p);

inline double normal_log_density(double y, double mean, double sd) {
  const double r = (y - mean) / sd;
  return -0.5 * log_two_pi - std::log(sd) - 0.5 * r * r;
}

/// Which unconstraining bijection a parameter block uses.
enum class Support { real, positive, interval };

/// A univariate prior over a constrained parameter value.
class Prior {
 public:
  enum class Family { normal, half_cauchy, log_normal, uniform };

  static Prior normal(double loc, double scale) { return {Family::normal, loc, scale}; }
  static Prior half_cauchy(double scale) { return {Family::half_cauchy, 0.0, scale}; }
  /// Log-normal: log(x) ~ Normal(loc, scale).
  static Prior log_normal(double loc, double scale) { return {Family::log_normal, loc, scale}; }
  static Prior uniform(double lower, double upper) { return {Family::uniform, lower, upper}; }

  Family family() const { return family_; }
  double a() const { return a_; }
  double b() const { return b_; }

  Support support() const;

  /// Log density at x and its derivative. Returns -inf outside the support.
  double log_density(double x, double& d_dx) const;

  std::string describe() const;
  static std::string family_name(Family f);
  static Family family_from_name(const std::string& name);

  bool operator==(const Prior&) const = default;

 private:
  Prior(Family f, double a, double b) : family_(f), a_(a), b_(b) {}

  Family family_;
  double a_;
  double b_;
};

}  // namespace hbrnorm

#endif
