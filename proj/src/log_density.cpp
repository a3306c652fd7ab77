#include "hbrnorm/log_density.hpp"

#include <cmath>
#include <vector>

#include "hbrnorm/error.hpp"

namespace hbrnorm {

std::string LogDensity::locate_non_finite(std::span<const double> u) const {
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!std::isfinite(u[i])) return layout().owner(i).name;
  }
  return "likelihood";
}

double ConstrainedLogDensity::log_density(std::span<const double> u, std::span<double> grad) const {
  const auto& lay = layout();
  const std::size_t d = lay.dim();
  std::vector<double> x(d), dx_du(d), dlogj(d);
  lay.constrain(u, x);
  const double logj = lay.log_jacobian(u, dx_du, dlogj);
  const double lp = constrained_log_density(x, grad);
  for (std::size_t i = 0; i < d; ++i) grad[i] = grad[i] * dx_du[i] + dlogj[i];
  return lp + logj;
}

LogpGrad logp_and_grad(const LogDensity& density, std::span<const double> u) {
  LogpGrad out{0.0, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(density.dim()))};
  if (u.size() != density.dim()) throw Error(ErrorCode::invalid_argument, "parameter vector has the wrong length");
  out.logp = density.log_density(u, std::span<double>(out.grad.data(), density.dim()));
  if (!std::isfinite(out.logp)) {
    throw Error(ErrorCode::sampler, "non-finite log density in block '" + density.locate_non_finite(u) + "'");
  }
  for (std::size_t i = 0; i < density.dim(); ++i) {
    if (!std::isfinite(out.grad(static_cast<Eigen::Index>(i)))) {
      throw Error(ErrorCode::sampler, "non-finite gradient in block '" + density.layout().owner(i).name + "'");
    }
  }
  return out;
}

StandardNormalDensity::StandardNormalDensity(std::size_t dim) { layout_.add("x", dim); }

double StandardNormalDensity::log_density(std::span<const double> u, std::span<double> grad) const {
  double lp = -0.5 * static_cast<double>(u.size()) * log_two_pi;
  for (std::size_t i = 0; i < u.size(); ++i) {
    lp -= 0.5 * u[i] * u[i];
    grad[i] = -u[i];
  }
  return lp;
}

}  // namespace hbrnorm
