#ifndef HBRNORM_PARAM_LAYOUT_HPP
#define HBRNORM_PARAM_LAYOUT_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hbrnorm/distributions.hpp"

namespace hbrnorm {

/// A named contiguous slice of the flat parameter vector, with the bijection
/// that maps it to unconstrained space.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  Support support = Support::real;
  double lower = 0.0;  // interval support only
  double upper = 0.0;

  bool operator==(const ParamBlock&) const = default;
};

class ParamLayout {
 public:
  std::size_t add(std::string name, std::size_t size, Support support = Support::real, double lower = 0.0,
                  double upper = 0.0);

  std::size_t dim() const { return dim_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(std::size_t i) const { return blocks_.at(i); }
  std::optional<std::size_t> find(const std::string& name) const;
  const ParamBlock& at(const std::string& name) const;

  /// Element name such as "eta_mu[3]" for flat index i.
  std::string element_name(std::size_t i) const;
  /// Block owning flat index i.
  const ParamBlock& owner(std::size_t i) const;

  /// Constrained values from unconstrained ones.
  void constrain(std::span<const double> u, std::span<double> x) const;
  void unconstrain(std::span<const double> x, std::span<double> u) const;

  /// Sum of log |dx/du| over every element, plus per-element dx/du and
  /// d(log|dx/du|)/du for the chain rule.
  double log_jacobian(std::span<const double> u, std::span<double> dx_du, std::span<double> dlogj_du) const;

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t dim_ = 0;
};

}  // namespace hbrnorm

#endif
