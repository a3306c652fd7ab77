#ifndef HBRNORM_LOG_DENSITY_HPP
#define HBRNORM_LOG_DENSITY_HPP

#include <Eigen/Dense>

#include <span>
#include <string>

#include "hbrnorm/param_layout.hpp"

namespace hbrnorm {

/// Unnormalized log posterior over the unconstrained parameter vector.
class LogDensity {
 public:
  virtual ~LogDensity() = default;

  virtual const ParamLayout& layout() const = 0;
  std::size_t dim() const { return layout().dim(); }

  /// Log density (Jacobians included) at u, gradient written to grad.
  /// Non-finite results are returned as-is; the sampler treats them as
  /// divergent.
  virtual double log_density(std::span<const double> u, std::span<double> grad) const = 0;

  /// Name of the block (or "likelihood") responsible for a non-finite
  /// density at u.
  virtual std::string locate_non_finite(std::span<const double> u) const;
};

/// Densities written over the constrained values. The base adds the
/// log-Jacobian of every block bijection and applies the chain rule.
class ConstrainedLogDensity : public LogDensity {
 public:
  double log_density(std::span<const double> u, std::span<double> grad) const final;

 protected:
  virtual double constrained_log_density(std::span<const double> x, std::span<double> grad_x) const = 0;
};

struct LogpGrad {
  double logp;
  Eigen::VectorXd grad;
};

/// Evaluates the density; throws ErrorCode::sampler naming the offending
/// block if the value or gradient is not finite.
LogpGrad logp_and_grad(const LogDensity& density, std::span<const double> u);

/// Independent standard normals over `dim` real parameters.
class StandardNormalDensity final : public LogDensity {
 public:
  explicit StandardNormalDensity(std::size_t dim);
  const ParamLayout& layout() const override { return layout_; }
  double log_density(std::span<const double> u, std::span<double> grad) const override;

 private:
  ParamLayout layout_;
};

}  // namespace hbrnorm

#endif
