#include "hbrnorm/distributions.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <sstream>

#include "hbrnorm/error.hpp"

namespace hbrnorm {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::invalid_argument, "normal_quantile: p outside [0,1]");
  }
  return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p);
}

Support Prior::support() const {
  switch (family_) {
    case Family::normal:
      return Support::real;
    case Family::half_cauchy:
    case Family::log_normal:
      return Support::positive;
    case Family::uniform:
      return Support::interval;
  }
  return Support::real;
}

double Prior::log_density(double x, double& d_dx) const {
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  d_dx = 0.0;
  switch (family_) {
    case Family::normal: {
      const double r = (x - a_) / b_;
      d_dx = -r / b_;
      return -0.5 * log_two_pi - std::log(b_) - 0.5 * r * r;
    }
    case Family::half_cauchy: {
      if (!(x > 0.0)) return neg_inf;
      const double r = x / b_;
      d_dx = -2.0 * r / (b_ * (1.0 + r * r));
      return log_two - log_pi - std::log(b_) - std::log1p(r * r);
    }
    case Family::log_normal: {
      if (!(x > 0.0)) return neg_inf;
      const double lx = std::log(x);
      const double r = (lx - a_) / b_;
      d_dx = -(1.0 + r / b_) / x;
      return -0.5 * log_two_pi - std::log(b_) - lx - 0.5 * r * r;
    }
    case Family::uniform: {
      if (!(x > a_ && x < b_)) return neg_inf;
      return -std::log(b_ - a_);
    }
  }
  return neg_inf;
}

std::string Prior::family_name(Family f) {
  switch (f) {
    case Family::normal:
      return "normal";
    case Family::half_cauchy:
      return "half_cauchy";
    case Family::log_normal:
      return "log_normal";
    case Family::uniform:
      return "uniform";
  }
  return "?";
}

Prior::Family Prior::family_from_name(const std::string& name) {
  if (name == "normal") return Family::normal;
  if (name == "half_cauchy") return Family::half_cauchy;
  if (name == "log_normal") return Family::log_normal;
  if (name == "uniform") return Family::uniform;
  throw Error(ErrorCode::schema, "unknown prior family '" + name + "'");
}

std::string Prior::describe() const {
  std::ostringstream os;
  os << family_name(family_) << "(" << a_;
  if (family_ != Family::half_cauchy) os << ", " << b_;
  os << ")";
  return os.str();
}

}  // namespace hbrnorm
