#ifndef HBRNORM_NUTS_HPP
#define HBRNORM_NUTS_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "hbrnorm/diagnostics.hpp"
#include "hbrnorm/log_density.hpp"

namespace hbrnorm {

struct SamplerConfig {
  std::size_t chains = 2;
  std::size_t warmup = 1000;
  std::size_t draws = 1000;
  std::uint64_t seed = 0;
  /// Extra stream id mixed into every chain seed (e.g. the measurement unit).
  std::uint64_t stream = 0;
  double target_accept = 0.8;
  std::size_t max_depth = 10;
  double init_radius = 0.1;
  /// Worker threads across chains; results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
};

/// Chain-specific generator derived from (seed, stream, chain).
std::mt19937_64 chain_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t chain);

/// Multinomial NUTS with the generalized U-turn criterion, dual-averaging
/// step size and windowed diagonal metric adaptation. Returned draws are in
/// constrained space.
PosteriorDraws sample_nuts(const LogDensity& density, const SamplerConfig& config);

/// Single leapfrog integrator, exposed for reversibility checks.
/// Advances (q, p) by `steps` steps of size eps under a diagonal inverse metric.
void leapfrog(const LogDensity& density, std::span<double> q, std::span<double> p,
              std::span<const double> inv_metric, double eps, std::size_t steps);

}  // namespace hbrnorm

#endif
