#include "hbrnorm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hbrnorm/distributions.hpp"
#include "hbrnorm/error.hpp"

namespace hbrnorm {

namespace {

using Chains = std::vector<std::vector<double>>;

bool all_constant(const Chains& chains) {
  const double first = chains.front().front();
  for (const auto& c : chains) {
    for (double v : c) {
      if (v != first) return false;
    }
  }
  return true;
}

Chains split_chains(const Chains& chains) {
  Chains out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    // middle draw dropped for odd lengths
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

/// Replaces values by normal scores of their pooled (average) ranks.
Chains rank_normalize(const Chains& chains) {
  std::vector<std::pair<double, std::size_t>> pooled;
  std::size_t total = 0;
  for (const auto& c : chains) total += c.size();
  pooled.reserve(total);
  for (const auto& c : chains) {
    for (double v : c) pooled.emplace_back(v, pooled.size());
  }
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> rank(total);
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && pooled[j + 1].first == pooled[i].first) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[pooled[k].second] = r;
    i = j + 1;
  }
  Chains out = chains;
  std::size_t k = 0;
  const double s = static_cast<double>(total);
  for (auto& c : out) {
    for (double& v : c) v = normal_quantile((rank[k++] - 0.375) / (s + 0.25));
  }
  return out;
}

double rhat_raw(const Chains& chains) {
  const double m = static_cast<double>(chains.size());
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    const double mu = std::accumulate(c.begin(), c.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : c) ss += (v - mu) * (v - mu);
    means.push_back(mu);
    vars.push_back(ss / (n - 1.0));
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / (m - 1.0);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  if (w == 0.0) return b == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double ess_raw(const Chains& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  if (n < 4) return static_cast<double>(m * n);
  std::vector<double> means(m), chain_var(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = std::accumulate(chains[c].begin(), chains[c].end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : chains[c]) ss += (v - means[c]) * (v - means[c]);
    chain_var[c] = ss / (static_cast<double>(n) - 1.0);
  }
  const double mean_var = std::accumulate(chain_var.begin(), chain_var.end(), 0.0) / static_cast<double>(m);
  double var_plus = mean_var * (static_cast<double>(n) - 1.0) / static_cast<double>(n);
  if (m > 1) {
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    var_plus += b / (static_cast<double>(m) - 1.0);
  }
  const double total = static_cast<double>(m * n);
  if (!(var_plus > 0.0)) return total;

  // mean over chains of the biased autocovariance at `lag`, computed lazily
  auto mean_acov = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const auto& x = chains[c];
      double s = 0.0;
      for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - means[c]) * (x[t + lag] - means[c]);
      acc += s / static_cast<double>(n);
    }
    return acc / static_cast<double>(m);
  };

  std::vector<double> rho(n, 0.0);
  double rho_even = 1.0;
  rho[0] = rho_even;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  std::size_t s = 1;
  while (s < n - 4 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[s + 1] = rho_even;
      rho[s + 2] = rho_odd;
    }
    s += 2;
  }
  const std::size_t max_s = s;
  if (rho_even > 0.0 && max_s + 1 < n) rho[max_s + 1] = rho_even;

  // initial positive sequence -> initial monotone sequence
  for (s = 1; s + 3 <= max_s; s += 2) {
    if (rho[s + 1] + rho[s + 2] > rho[s - 1] + rho[s]) {
      rho[s + 1] = 0.5 * (rho[s - 1] + rho[s]);
      rho[s + 2] = rho[s + 1];
    }
  }
  double tau = -1.0;
  for (std::size_t t = 0; t < max_s; ++t) tau += 2.0 * rho[t];
  if (max_s + 1 < n) tau += rho[max_s + 1];
  return std::min(total / tau, total * std::log10(total));
}

void check_shape(const Chains& chains) {
  if (chains.empty() || chains.front().size() < 2) {
    throw Error(ErrorCode::invalid_argument, "diagnostics need at least one chain of length >= 2");
  }
  for (const auto& c : chains) {
    if (c.size() != chains.front().size()) throw Error(ErrorCode::invalid_argument, "chains differ in length");
  }
}

}  // namespace

double split_rhat(const Chains& chains) {
  check_shape(chains);
  if (all_constant(chains)) return 1.0;
  return rhat_raw(rank_normalize(split_chains(chains)));
}

double ess_bulk(const Chains& chains) {
  check_shape(chains);
  const double total = static_cast<double>(chains.size() * chains.front().size());
  if (all_constant(chains)) return total;
  return ess_raw(rank_normalize(split_chains(chains)));
}

double ess_basic(const Chains& chains) {
  check_shape(chains);
  if (all_constant(chains)) return static_cast<double>(chains.size() * chains.front().size());
  return ess_raw(chains);
}

std::vector<std::vector<double>> PosteriorDraws::parameter_chains(std::size_t d) const {
  std::vector<std::vector<double>> out(chains, std::vector<double>(samples));
  for (std::size_t c = 0; c < chains; ++c) {
    for (std::size_t s = 0; s < samples; ++s) out[c][s] = (*this)(c, s, d);
  }
  return out;
}

Eigen::VectorXd PosteriorDraws::parameter(std::size_t d) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(total()));
  for (std::size_t k = 0; k < total(); ++k) v(static_cast<Eigen::Index>(k)) = values[k * dim() + d];
  return v;
}

double PosteriorDraws::mean(std::size_t d) const { return parameter(d).mean(); }

double PosteriorDraws::sd(std::size_t d) const {
  const Eigen::VectorXd v = parameter(d);
  if (v.size() < 2) return 0.0;
  return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

DiagnosticsReport diagnostics(const PosteriorDraws& draws) {
  if (draws.chains < 2) throw Error(ErrorCode::invalid_argument, "diagnostics need at least two chains");
  DiagnosticsReport r;
  r.min_ess = std::numeric_limits<double>::infinity();
  for (std::size_t d = 0; d < draws.dim(); ++d) {
    const auto chains = draws.parameter_chains(d);
    r.rhat.push_back(split_rhat(chains));
    r.ess_bulk.push_back(ess_bulk(chains));
    r.max_rhat = std::max(r.max_rhat, r.rhat.back());
    r.min_ess = std::min(r.min_ess, r.ess_bulk.back());
  }
  if (draws.dim() == 0) r.min_ess = static_cast<double>(draws.total());
  for (const auto& cs : draws.chain_stats) r.divergences += cs.divergences;
  r.transitions = draws.total();
  r.divergence_fraction = r.transitions ? static_cast<double>(r.divergences) / static_cast<double>(r.transitions) : 0.0;
  r.rhat_flag = r.max_rhat > rhat_threshold;
  r.divergence_flag = r.divergence_fraction > divergence_threshold;
  return r;
}

}  // namespace hbrnorm
