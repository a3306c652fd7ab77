#include "hbrnorm/nuts.hpp"

#include <cmath>
#include <limits>
#include <thread>

#include "hbrnorm/distributions.hpp"
#include "hbrnorm/error.hpp"

namespace hbrnorm {

namespace {

using Vec = Eigen::VectorXd;

constexpr double max_delta_h = 1000.0;
constexpr std::size_t max_init_attempts = 100;

struct PhasePoint {
  Vec q;
  Vec p;
  Vec grad;
  double logp = 0.0;
};

/// Step-size dual averaging with the usual defaults.
class DualAveraging {
 public:
  explicit DualAveraging(double delta) : delta_(delta) {}

  void restart(double step_size) {
    mu_ = std::log(10.0 * step_size);
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }

  double learn(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double t = static_cast<double>(counter_);
    const double eta = 1.0 / (t + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(t) / gamma_;
    const double x_eta = std::pow(t, -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step_size() const { return std::exp(x_bar_); }

 private:
  double delta_;
  double mu_ = 0.0;
  std::size_t counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  static constexpr double gamma_ = 0.05;
  static constexpr double t0_ = 10.0;
  static constexpr double kappa_ = 0.75;
};

/// Welford accumulator for the diagonal metric.
class VarianceEstimator {
 public:
  explicit VarianceEstimator(std::size_t d) : mean_(Vec::Zero(static_cast<Eigen::Index>(d))), m2_(mean_) {}

  void restart() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }
  void add(const Vec& q) {
    ++n_;
    const Vec delta = q - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(q - mean_);
  }
  std::size_t count() const { return n_; }
  Vec variance() const { return m2_ / (static_cast<double>(n_) - 1.0); }

 private:
  std::size_t n_ = 0;
  Vec mean_;
  Vec m2_;
};

/// Stan-style warmup windows: fast initial buffer, doubling slow windows,
/// fast terminal buffer.
class WindowSchedule {
 public:
  WindowSchedule(std::size_t warmup, std::size_t dim) : warmup_(warmup), estimator_(dim) {
    if (warmup < 20) {
      enabled_ = false;
      return;
    }
    if (init_buffer_ + base_window_ + term_buffer_ > warmup) {
      init_buffer_ = static_cast<std::size_t>(0.15 * static_cast<double>(warmup));
      term_buffer_ = static_cast<std::size_t>(0.1 * static_cast<double>(warmup));
      base_window_ = warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  /// Feeds one warmup position; returns true when a window closed and
  /// inv_metric was updated.
  bool learn(const Vec& q, Vec& inv_metric) {
    if (!enabled_) {
      ++counter_;
      return false;
    }
    if (in_window()) estimator_.add(q);
    if (end_of_window()) {
      compute_next_window();
      const double n = static_cast<double>(estimator_.count());
      inv_metric = (n / (n + 5.0)) * estimator_.variance().array() + 1e-3 * (5.0 / (n + 5.0));
      estimator_.restart();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < warmup_ - term_buffer_ && counter_ != warmup_;
  }
  bool end_of_window() const { return counter_ == next_window_ && counter_ != warmup_; }
  void compute_next_window() {
    if (next_window_ == warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != warmup_ - term_buffer_ - 1) {
      const std::size_t boundary = next_window_ + 2 * window_size_;
      if (boundary >= warmup_ - term_buffer_) next_window_ = warmup_ - term_buffer_ - 1;
    }
  }

  std::size_t warmup_;
  bool enabled_ = true;
  std::size_t init_buffer_ = 75;
  std::size_t term_buffer_ = 50;
  std::size_t base_window_ = 25;
  std::size_t window_size_ = 0;
  std::size_t next_window_ = 0;
  std::size_t counter_ = 0;
  VarianceEstimator estimator_;
};

class NutsChain {
 public:
  NutsChain(const LogDensity& density, const SamplerConfig& cfg, std::size_t chain)
      : density_(density),
        cfg_(cfg),
        dim_(density.dim()),
        rng_(chain_rng(cfg.seed, cfg.stream, chain)),
        inv_metric_(Vec::Ones(static_cast<Eigen::Index>(dim_))),
        adapt_(cfg.target_accept) {}

  void run(std::span<double> out, ChainStats& stats) {
    initialize();
    find_reasonable_step_size();
    adapt_.restart(eps_);
    WindowSchedule windows(cfg_.warmup, dim_);

    for (std::size_t it = 0; it < cfg_.warmup; ++it) {
      transition();
      if (divergent_) ++stats.warmup_divergences;
      eps_ = adapt_.learn(accept_stat_);
      if (windows.learn(z_.q, inv_metric_)) {
        find_reasonable_step_size();
        adapt_.restart(eps_);
      }
    }
    if (cfg_.warmup > 0) {
      if (stats.warmup_divergences == cfg_.warmup) {
        throw Error(ErrorCode::sampler, "every warmup transition diverged");
      }
      eps_ = adapt_.final_step_size();
    }

    Vec x(static_cast<Eigen::Index>(dim_));
    double accept_sum = 0.0, depth_sum = 0.0;
    for (std::size_t it = 0; it < cfg_.draws; ++it) {
      transition();
      if (divergent_) ++stats.divergences;
      accept_sum += accept_stat_;
      depth_sum += static_cast<double>(depth_);
      density_.layout().constrain(std::span<const double>(z_.q.data(), dim_), out.subspan(it * dim_, dim_));
    }
    stats.step_size = eps_;
    stats.inv_metric.assign(inv_metric_.data(), inv_metric_.data() + dim_);
    stats.mean_accept_stat = cfg_.draws ? accept_sum / static_cast<double>(cfg_.draws) : 0.0;
    stats.mean_tree_depth = cfg_.draws ? depth_sum / static_cast<double>(cfg_.draws) : 0.0;
    stats.leapfrog_steps = leapfrogs_;
  }

 private:
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

  bool evaluate(PhasePoint& z) {
    z.logp = density_.log_density(std::span<const double>(z.q.data(), dim_), std::span<double>(z.grad.data(), dim_));
    return std::isfinite(z.logp) && z.grad.allFinite();
  }

  void initialize() {
    std::normal_distribution<double> jitter(0.0, cfg_.init_radius);
    z_.q.resize(static_cast<Eigen::Index>(dim_));
    z_.p.setZero(static_cast<Eigen::Index>(dim_));
    z_.grad.resize(static_cast<Eigen::Index>(dim_));
    for (std::size_t attempt = 0; attempt < max_init_attempts; ++attempt) {
      for (std::size_t i = 0; i < dim_; ++i) z_.q(static_cast<Eigen::Index>(i)) = jitter(rng_);
      if (evaluate(z_)) return;
    }
    throw Error(ErrorCode::sampler, "non-finite initial density after " + std::to_string(max_init_attempts) +
                                        " re-initializations (block '" +
                                        density_.locate_non_finite(std::span<const double>(z_.q.data(), dim_)) +
                                        "')");
  }

  void sample_momentum(PhasePoint& z) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p(i) = normal(rng_) / std::sqrt(inv_metric_(i));
  }

  double hamiltonian(const PhasePoint& z) const {
    return -z.logp + 0.5 * z.p.dot(inv_metric_.cwiseProduct(z.p));
  }

  void step(PhasePoint& z, double eps) {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_metric_.cwiseProduct(z.p);
    evaluate(z);
    z.p += 0.5 * eps * z.grad;
    ++leapfrogs_;
  }

  void find_reasonable_step_size() {
    const PhasePoint start = z_;
    int direction = 0;
    for (int iter = 0; iter < 200; ++iter) {
      z_ = start;
      sample_momentum(z_);
      const double h0 = hamiltonian(z_);
      step(z_, eps_);
      double h = hamiltonian(z_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      const double delta_h = h0 - h;
      const int dir_new = delta_h > std::log(0.8) ? 1 : -1;
      if (direction == 0) direction = dir_new;
      if (dir_new != direction) break;
      eps_ = direction == 1 ? 2.0 * eps_ : 0.5 * eps_;
      if (eps_ > 1e7) throw Error(ErrorCode::sampler, "step size search diverged; posterior may be improper");
      if (eps_ < 1e-12) break;
    }
    z_ = start;
  }

  static bool no_u_turn(const Vec& p_sharp_minus, const Vec& p_sharp_plus, const Vec& rho) {
    return p_sharp_plus.dot(rho) > 0.0 && p_sharp_minus.dot(rho) > 0.0;
  }

  bool build_tree(std::size_t depth, PhasePoint& z, PhasePoint& z_propose, Vec& p_sharp_beg, Vec& p_sharp_end,
                  Vec& rho, Vec& p_beg, Vec& p_end, double h0, double sign, double& log_sum_weight,
                  double& sum_metro_prob, std::size_t& n_leapfrog) {
    if (depth == 0) {
      step(z, sign * eps_);
      ++n_leapfrog;
      double h = hamiltonian(z);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - h0 > max_delta_h) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z;
      p_sharp_beg = inv_metric_.cwiseProduct(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }
    const auto d = static_cast<Eigen::Index>(dim_);
    Vec p_sharp_init_end(d), p_init_end(d), rho_init = Vec::Zero(d);
    double log_sum_weight_init = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, z, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg, p_init_end, h0, sign,
                    log_sum_weight_init, sum_metro_prob, n_leapfrog)) {
      return false;
    }
    PhasePoint z_propose_final = z;
    Vec p_sharp_final_beg(d), p_final_beg(d), rho_final = Vec::Zero(d);
    double log_sum_weight_final = -std::numeric_limits<double>::infinity();
    if (!build_tree(depth - 1, z, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final, p_final_beg, p_end, h0,
                    sign, log_sum_weight_final, sum_metro_prob, n_leapfrog)) {
      return false;
    }
    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }
    const Vec rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = no_u_turn(p_sharp_beg, p_sharp_end, rho_subtree);
    persist = persist && no_u_turn(p_sharp_beg, p_sharp_final_beg, rho_init + p_final_beg);
    persist = persist && no_u_turn(p_sharp_init_end, p_sharp_end, rho_final + p_init_end);
    return persist;
  }

  void transition() {
    const auto d = static_cast<Eigen::Index>(dim_);
    sample_momentum(z_);
    divergent_ = false;
    PhasePoint z_fwd = z_, z_bwd = z_, z_sample = z_, z_propose = z_;
    Vec p_fwd_fwd = z_.p, p_sharp_fwd_fwd = inv_metric_.cwiseProduct(z_.p);
    Vec p_fwd_bwd = p_fwd_fwd, p_sharp_fwd_bwd = p_sharp_fwd_fwd;
    Vec p_bwd_fwd = p_fwd_fwd, p_sharp_bwd_fwd = p_sharp_fwd_fwd;
    Vec p_bwd_bwd = p_fwd_fwd, p_sharp_bwd_bwd = p_sharp_fwd_fwd;
    Vec rho = z_.p;
    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z_);
    std::size_t n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    depth_ = 0;

    while (depth_ < cfg_.max_depth) {
      Vec rho_fwd = Vec::Zero(d), rho_bwd = Vec::Zero(d);
      bool valid_subtree = false;
      double log_sum_weight_subtree = -std::numeric_limits<double>::infinity();
      if (uniform() > 0.5) {
        rho_bwd = rho;
        p_bwd_fwd = p_fwd_bwd;
        p_sharp_bwd_fwd = p_sharp_fwd_bwd;
        z_propose = z_fwd;
        valid_subtree = build_tree(depth_, z_fwd, z_propose, p_sharp_fwd_bwd, p_sharp_fwd_fwd, rho_fwd, p_fwd_bwd,
                                   p_fwd_fwd, h0, 1.0, log_sum_weight_subtree, sum_metro_prob, n_leapfrog);
      } else {
        rho_fwd = rho;
        p_fwd_bwd = p_bwd_fwd;
        p_sharp_fwd_bwd = p_sharp_bwd_fwd;
        z_propose = z_bwd;
        valid_subtree = build_tree(depth_, z_bwd, z_propose, p_sharp_bwd_fwd, p_sharp_bwd_bwd, rho_bwd, p_bwd_fwd,
                                   p_bwd_bwd, h0, -1.0, log_sum_weight_subtree, sum_metro_prob, n_leapfrog);
      }
      if (!valid_subtree) break;
      ++depth_;
      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
      rho = rho_bwd + rho_fwd;
      bool persist = no_u_turn(p_sharp_bwd_bwd, p_sharp_fwd_fwd, rho);
      persist = persist && no_u_turn(p_sharp_bwd_bwd, p_sharp_fwd_bwd, rho_bwd + p_fwd_bwd);
      persist = persist && no_u_turn(p_sharp_bwd_fwd, p_sharp_fwd_fwd, rho_fwd + p_bwd_fwd);
      if (!persist) break;
    }
    z_ = z_sample;
    accept_stat_ = n_leapfrog ? sum_metro_prob / static_cast<double>(n_leapfrog) : 0.0;
  }

  const LogDensity& density_;
  const SamplerConfig& cfg_;
  std::size_t dim_;
  std::mt19937_64 rng_;
  Vec inv_metric_;
  DualAveraging adapt_;
  PhasePoint z_;
  double eps_ = 1.0;
  double accept_stat_ = 0.0;
  bool divergent_ = false;
  std::size_t depth_ = 0;
  std::size_t leapfrogs_ = 0;
};

}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1) throw Error(ErrorCode::invalid_argument, "sampler needs at least one chain");
  if (draws < 1) throw Error(ErrorCode::invalid_argument, "sampler needs at least one draw");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "target acceptance must lie in (0,1)");
  }
  if (max_depth < 1) throw Error(ErrorCode::invalid_argument, "max tree depth must be >= 1");
}

std::mt19937_64 chain_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(chain), static_cast<std::uint32_t>(chain >> 32)};
  return std::mt19937_64(seq);
}

PosteriorDraws sample_nuts(const LogDensity& density, const SamplerConfig& config) {
  config.validate();
  PosteriorDraws out;
  out.layout = density.layout();
  out.chains = config.chains;
  out.samples = config.draws;
  out.values.assign(out.chains * out.samples * out.dim(), 0.0);
  out.chain_stats.resize(out.chains);

  const std::size_t block = out.samples * out.dim();
  auto run_chain = [&](std::size_t c) {
    NutsChain chain(density, config, c);
    chain.run(std::span<double>(out.values.data() + c * block, block), out.chain_stats[c]);
  };
  const std::size_t threads = std::min(config.threads, config.chains);
  if (threads <= 1) {
    for (std::size_t c = 0; c < config.chains; ++c) run_chain(c);
    return out;
  }
  std::vector<std::exception_ptr> errors(config.chains);
  std::vector<std::thread> pool;
  for (std::size_t c = 0; c < config.chains; ++c) {
    pool.emplace_back([&, c] {
      try {
        run_chain(c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

void leapfrog(const LogDensity& density, std::span<double> q, std::span<double> p, std::span<const double> inv_metric,
              double eps, std::size_t steps) {
  const std::size_t d = density.dim();
  std::vector<double> grad(d);
  density.log_density(q, grad);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t i = 0; i < d; ++i) p[i] += 0.5 * eps * grad[i];
    for (std::size_t i = 0; i < d; ++i) q[i] += eps * inv_metric[i] * p[i];
    density.log_density(q, grad);
    for (std::size_t i = 0; i < d; ++i) p[i] += 0.5 * eps * grad[i];
  }
}

}  // namespace hbrnorm
