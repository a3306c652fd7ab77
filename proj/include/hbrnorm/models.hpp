#ifndef HBRNORM_MODELS_HPP
#define HBRNORM_MODELS_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hbrnorm/data.hpp"
#include "hbrnorm/diagnostics.hpp"
#include "hbrnorm/distributions.hpp"
#include "hbrnorm/log_density.hpp"
#include "hbrnorm/nuts.hpp"

namespace hbrnorm {

enum class Strategy { pooling, no_pooling, hbr };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& s);

struct NoiseForm {
  bool heteroscedastic = false;
  /// Polynomial degree of the noise predictor (heteroscedastic only).
  std::size_t degree = 2;

  static NoiseForm homoscedastic() { return {}; }
  static NoiseForm hetero(std::size_t degree = 2) { return {true, degree}; }
  bool operator==(const NoiseForm&) const = default;
};

/// "homo" or "hetero:<degree>".
NoiseForm parse_noise_form(const std::string& s);
std::string noise_form_name(const NoiseForm& n);

/// Priors over the four hyperparameter blocks of one measurement unit, one
/// entry per element. Used in place of the weakly-informative defaults when
/// recalibrating from a distilled reference model.
struct UnitHyperpriors {
  std::vector<Prior> mu_theta_mu;
  std::vector<Prior> sigma_theta_mu;
  std::vector<Prior> mu_theta_sigma;
  std::vector<Prior> sigma_theta_sigma;

  bool operator==(const UnitHyperpriors&) const = default;
};

struct ModelSpec {
  Strategy strategy = Strategy::hbr;
  /// Polynomial degree of the mean in each covariate; 1 is linear.
  std::size_t mean_degree = 1;
  NoiseForm noise;
  /// hbr only: fixes sigma_theta_mu and sigma_theta_sigma to this value
  /// instead of sampling them.
  std::optional<double> clamp_group_scale;
  /// hbr only: per-unit informative hyperpriors (empty means defaults).
  std::vector<UnitHyperpriors> hyperpriors;

  /// Mean basis size for p covariates: intercept plus degree powers of each.
  std::size_t mean_basis(std::size_t p) const { return 1 + p * mean_degree; }
  std::size_t noise_basis(std::size_t p) const { return noise.heteroscedastic ? 1 + p * noise.degree : 1; }

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

namespace default_priors {
inline Prior coefficient() { return Prior::normal(0.0, 10.0); }
inline Prior group_scale() { return Prior::half_cauchy(5.0); }
inline Prior noise_sd() { return Prior::uniform(0.0, 100.0); }
}  // namespace default_priors

/// [1, x_1, x_1^2, ..., x_1^d, x_2, ...] per row of standardized covariates.
Eigen::MatrixXd polynomial_basis(const Eigen::MatrixXd& z, std::size_t degree);

/// Parameter layout, priors, and the map from constrained parameters to
/// per-batch regression coefficients and noise parameters. Independent of
/// the response data.
///
/// hbr, homoscedastic: beta_i = mu_theta_mu + sigma_theta_mu * eta_mu_i and
/// sigma_i = mu_theta_sigma * exp(sigma_theta_sigma * eta_sigma_i), i.e.
/// log sigma_i is Normal(log mu_theta_sigma, sigma_theta_sigma^2).
/// hbr, heteroscedastic: gamma_i = mu_theta_sigma + sigma_theta_sigma *
/// eta_sigma_i and sigma_i(x) = softplus(psi(x) . gamma_i).
class ModelStructure {
 public:
  ModelStructure(const ModelSpec& spec, std::size_t num_covariates, std::size_t num_batches,
                 const UnitHyperpriors* hyperpriors = nullptr);

  const ParamLayout& layout() const { return layout_; }
  const ModelSpec& spec() const { return spec_; }
  std::size_t num_batches() const { return num_batches_; }
  /// Number of distinct parameter sets: 1 for pooling, else num_batches.
  std::size_t slots() const { return spec_.strategy == Strategy::pooling ? 1 : num_batches_; }
  std::size_t slot_of(std::size_t batch) const { return spec_.strategy == Strategy::pooling ? 0 : batch; }
  std::size_t mean_basis() const { return k_mu_; }
  /// Columns of the noise matrix: 1 (sd value) when homoscedastic.
  std::size_t noise_width() const { return k_sigma_; }

  /// Sum of block log priors at constrained x; gradient accumulated into grad.
  double log_prior(std::span<const double> x, std::span<double> grad) const;
  /// Block whose prior is non-finite at x, if any.
  std::optional<std::string> non_finite_prior_block(std::span<const double> x) const;

  /// beta: slots x mean_basis; noise: slots x noise_width.
  void effective(std::span<const double> x, Eigen::MatrixXd& beta, Eigen::MatrixXd& noise) const;
  /// Chain rule from d/d(beta, noise) back onto the constrained vector.
  void backprop(std::span<const double> x, const Eigen::MatrixXd& d_beta, const Eigen::MatrixXd& d_noise,
                std::span<double> grad) const;

  /// The prior used for every element of a block.
  const std::vector<Prior>& block_priors(std::size_t block) const { return priors_.at(block); }

 private:
  std::size_t add_block(const std::string& name, std::vector<Prior> priors);

  ModelSpec spec_;
  std::size_t p_;
  std::size_t num_batches_;
  std::size_t k_mu_;
  std::size_t k_sigma_;
  ParamLayout layout_;
  std::vector<std::vector<Prior>> priors_;  // per block, per element
  // block ids; unused ones are npos
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t b_theta_mu_ = npos, b_noise_ = npos;
  std::size_t b_mu_mu_ = npos, b_sigma_mu_ = npos, b_eta_mu_ = npos;
  std::size_t b_mu_sigma_ = npos, b_sigma_sigma_ = npos, b_eta_sigma_ = npos;
};

/// Joint log density of one measurement unit on standardized data.
class NormativeDensity final : public ConstrainedLogDensity {
 public:
  /// z: standardized covariates (n x p); y: standardized responses;
  /// batch: dense batch index per row.
  NormativeDensity(ModelStructure structure, const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                   std::vector<std::size_t> batch);

  const ParamLayout& layout() const override { return structure_.layout(); }
  const ModelStructure& structure() const { return structure_; }
  std::string locate_non_finite(std::span<const double> u) const override;

  /// Row-by-row likelihood, bypassing the sufficient-statistics shortcut
  /// used for homoscedastic noise. Exposed so the two can be compared.
  double row_log_likelihood(std::span<const double> x, Eigen::MatrixXd* d_beta, Eigen::MatrixXd* d_noise) const;

 protected:
  double constrained_log_density(std::span<const double> x, std::span<double> grad_x) const override;

 private:
  double log_likelihood(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& noise, Eigen::MatrixXd& d_beta,
                        Eigen::MatrixXd& d_noise) const;

  ModelStructure structure_;
  Eigen::MatrixXd phi_;  // mean basis
  Eigen::MatrixXd psi_;  // noise basis
  Eigen::VectorXd y_;
  std::vector<std::size_t> slot_;
  // homoscedastic sufficient statistics per slot
  std::vector<double> count_, syy_;
  std::vector<Eigen::VectorXd> sphy_;
  std::vector<Eigen::MatrixXd> sphph_;
};

/// Density for one unit of ds under spec, with ds standardized by `standardizer`.
std::unique_ptr<NormativeDensity> build_density(const ModelSpec& spec, const Dataset& ds, std::size_t unit,
                                                const Standardizer& standardizer, const BatchIndex& batches);
/// Convenience overload standardizing with ds itself.
std::unique_ptr<NormativeDensity> build_density(const ModelSpec& spec, const Dataset& ds, std::size_t unit);

struct UnitFit {
  std::string name;
  PosteriorDraws draws;
  DiagnosticsReport diagnostics;

  bool operator==(const UnitFit&) const = default;
};

struct FittedNormativeModel {
  ModelSpec spec;
  std::vector<std::string> covariate_names;
  std::vector<std::string> batch_dimensions;
  /// Batch labels seen at fit time, in dense-index order.
  std::vector<std::string> batch_labels;
  Standardizer standardizer;
  std::vector<UnitFit> units;
  /// Set when the model was recalibrated from a hyperprior pack.
  std::string pack_hash;

  BatchIndex batch_index() const;
  ModelStructure structure(std::size_t unit) const;
  std::size_t unit_index(const std::string& name) const;
  std::vector<std::string> response_names() const;
};

struct FitOptions {
  SamplerConfig sampler;
  /// Units fitted concurrently.
  std::size_t jobs = 1;
  /// Subset of response units to fit; empty means all.
  std::vector<std::size_t> units;
  /// Standardization constants to use instead of fitting them on ds.
  std::optional<Standardizer> standardizer;
  /// Fail when more than this fraction of units has R-hat above rhat_fail.
  double max_bad_unit_fraction = 0.10;
  double rhat_fail = 1.05;
};

/// One independent posterior per measurement unit. Chain seeds are derived
/// from (sampler.seed, unit index), so a unit's draws do not depend on which
/// other units are fitted alongside it.
FittedNormativeModel fit(const ModelSpec& spec, const Dataset& ds, const FitOptions& options);

struct Prediction {
  Eigen::MatrixXd mean;  // n x u, original response scale
  Eigen::MatrixXd sd;
};

/// Posterior predictive mean and sd: sd^2 = E[f_sigma^2] + Var[f_mu] over draws.
Prediction predict(const FittedNormativeModel& model, const Eigen::MatrixXd& covariates,
                   const std::vector<std::string>& batch_labels);

struct DeviationReport {
  Eigen::MatrixXd z;
  Eigen::MatrixXd p;  // two-sided: 2 (1 - Phi(|z|))
  Eigen::MatrixXd mean;
  Eigen::MatrixXd sd;
};

DeviationReport deviation_report(const Eigen::MatrixXd& y, const Prediction& pred);
DeviationReport deviations(const FittedNormativeModel& model, const Dataset& ds_test);

/// Per-draw coefficients of the standardized mean basis for a batch (draws x k).
Eigen::MatrixXd coefficient_draws(const FittedNormativeModel& model, std::size_t unit, std::size_t batch);
/// Per-draw homoscedastic noise sd for a batch, standardized scale.
Eigen::VectorXd noise_sd_draws(const FittedNormativeModel& model, std::size_t unit, std::size_t batch);
/// Per-draw values of a named block element (constrained scale).
Eigen::VectorXd block_draws(const FittedNormativeModel& model, std::size_t unit, const std::string& block,
                            std::size_t element = 0);

/// Maps linear-mean coefficients on standardized scale to
/// (intercept, slope_1..slope_p) on the original scale of unit `unit`.
Eigen::VectorXd raw_linear_coefficients(const Standardizer& s, std::size_t unit, const Eigen::VectorXd& beta);

}  // namespace hbrnorm

#endif
