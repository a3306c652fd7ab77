#include "hbrnorm/param_layout.hpp"

#include <cmath>

#include "hbrnorm/error.hpp"

namespace hbrnorm {

std::size_t ParamLayout::add(std::string name, std::size_t size, Support support, double lower, double upper) {
  if (find(name)) throw Error(ErrorCode::invalid_argument, "duplicate parameter block '" + name + "'");
  if (support == Support::interval && !(upper > lower)) {
    throw Error(ErrorCode::invalid_argument, "interval block '" + name + "' needs lower < upper");
  }
  blocks_.push_back(ParamBlock{std::move(name), dim_, size, support, lower, upper});
  dim_ += size;
  return blocks_.size() - 1;
}

std::optional<std::size_t> ParamLayout::find(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return i;
  }
  return std::nullopt;
}

const ParamBlock& ParamLayout::at(const std::string& name) const {
  const auto i = find(name);
  if (!i) throw Error(ErrorCode::invalid_argument, "no parameter block named '" + name + "'");
  return blocks_[*i];
}

const ParamBlock& ParamLayout::owner(std::size_t i) const {
  for (const auto& b : blocks_) {
    if (i >= b.offset && i < b.offset + b.size) return b;
  }
  throw Error(ErrorCode::invalid_argument, "flat parameter index out of range");
}

std::string ParamLayout::element_name(std::size_t i) const {
  const auto& b = owner(i);
  if (b.size == 1) return b.name;
  return b.name + "[" + std::to_string(i - b.offset) + "]";
}

void ParamLayout::constrain(std::span<const double> u, std::span<double> x) const {
  for (const auto& b : blocks_) {
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
      switch (b.support) {
        case Support::real:
          x[i] = u[i];
          break;
        case Support::positive:
          x[i] = std::exp(u[i]);
          break;
        case Support::interval:
          x[i] = b.lower + (b.upper - b.lower) * logistic(u[i]);
          break;
      }
    }
  }
}

void ParamLayout::unconstrain(std::span<const double> x, std::span<double> u) const {
  for (const auto& b : blocks_) {
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
      switch (b.support) {
        case Support::real:
          u[i] = x[i];
          break;
        case Support::positive:
          u[i] = std::log(x[i]);
          break;
        case Support::interval: {
          const double s = (x[i] - b.lower) / (b.upper - b.lower);
          u[i] = std::log(s) - std::log1p(-s);
          break;
        }
      }
    }
  }
}

double ParamLayout::log_jacobian(std::span<const double> u, std::span<double> dx_du,
                                 std::span<double> dlogj_du) const {
  double total = 0.0;
  for (const auto& b : blocks_) {
    for (std::size_t i = b.offset; i < b.offset + b.size; ++i) {
      switch (b.support) {
        case Support::real:
          dx_du[i] = 1.0;
          dlogj_du[i] = 0.0;
          break;
        case Support::positive:
          dx_du[i] = std::exp(u[i]);
          dlogj_du[i] = 1.0;
          total += u[i];
          break;
        case Support::interval: {
          const double s = logistic(u[i]);
          const double width = b.upper - b.lower;
          dx_du[i] = width * s * (1.0 - s);
          dlogj_du[i] = 1.0 - 2.0 * s;
          // log s + log(1 - s) = -softplus(-u) - softplus(u)
          total += std::log(width) - softplus(-u[i]) - softplus(u[i]);
          break;
        }
      }
    }
  }
  return total;
}

}  // namespace hbrnorm
