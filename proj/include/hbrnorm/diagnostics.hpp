#ifndef HBRNORM_DIAGNOSTICS_HPP
#define HBRNORM_DIAGNOSTICS_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

#include "hbrnorm/param_layout.hpp"

namespace hbrnorm {

struct ChainStats {
  double step_size = 0.0;
  std::vector<double> inv_metric;
  std::size_t divergences = 0;          // post-warmup
  std::size_t warmup_divergences = 0;
  double mean_accept_stat = 0.0;
  double mean_tree_depth = 0.0;
  std::size_t leapfrog_steps = 0;

  bool operator==(const ChainStats&) const = default;
};

/// MCMC output in constrained space: chains x samples x dim.
struct PosteriorDraws {
  ParamLayout layout;
  std::size_t chains = 0;
  std::size_t samples = 0;
  std::vector<double> values;
  std::vector<ChainStats> chain_stats;

  std::size_t dim() const { return layout.dim(); }
  std::size_t total() const { return chains * samples; }

  double operator()(std::size_t chain, std::size_t sample, std::size_t d) const {
    return values[(chain * samples + sample) * dim() + d];
  }
  std::span<const double> draw(std::size_t chain, std::size_t sample) const {
    return {values.data() + (chain * samples + sample) * dim(), dim()};
  }
  /// Draw number k over all chains, chain-major.
  std::span<const double> draw(std::size_t k) const { return {values.data() + k * dim(), dim()}; }

  std::vector<std::vector<double>> parameter_chains(std::size_t d) const;
  Eigen::VectorXd parameter(std::size_t d) const;
  double mean(std::size_t d) const;
  double sd(std::size_t d) const;

  bool operator==(const PosteriorDraws&) const = default;
};

struct DiagnosticsReport {
  std::vector<double> rhat;      // rank-normalized split R-hat
  std::vector<double> ess_bulk;  // rank-normalized bulk ESS
  std::size_t divergences = 0;
  std::size_t transitions = 0;
  double divergence_fraction = 0.0;
  double max_rhat = 1.0;
  double min_ess = 0.0;
  bool rhat_flag = false;        // any R-hat > 1.01
  bool divergence_flag = false;  // more than 1% divergent transitions

  bool clean() const { return !rhat_flag && !divergence_flag; }

  bool operator==(const DiagnosticsReport&) const = default;
};

inline constexpr double rhat_threshold = 1.01;
inline constexpr double divergence_threshold = 0.01;

/// Rank-normalized split R-hat over chains of equal length. Constant input
/// (zero within- and between-chain variance) yields exactly 1.
double split_rhat(const std::vector<std::vector<double>>& chains);

/// Rank-normalized split bulk effective sample size.
double ess_bulk(const std::vector<std::vector<double>>& chains);

/// Effective sample size of the raw chains (no rank normalization, no
/// splitting), Geyer initial-monotone truncation.
double ess_basic(const std::vector<std::vector<double>>& chains);

/// Requires at least two chains.
DiagnosticsReport diagnostics(const PosteriorDraws& draws);

}  // namespace hbrnorm

#endif
