#include "hbrnorm/models.hpp"

#include <cmath>
#include <sstream>

#include "hbrnorm/error.hpp"
#include "hbrnorm/parallel.hpp"

namespace hbrnorm {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::pooling:
      return "pooling";
    case Strategy::no_pooling:
      return "nopool";
    case Strategy::hbr:
      return "hbr";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "pooling" || s == "pool") return Strategy::pooling;
  if (s == "nopool" || s == "no_pooling" || s == "no-pooling") return Strategy::no_pooling;
  if (s == "hbr") return Strategy::hbr;
  throw Error(ErrorCode::usage, "unknown strategy '" + s + "' (expected pooling, nopool or hbr)");
}

NoiseForm parse_noise_form(const std::string& s) {
  if (s == "homo" || s == "homoscedastic") return NoiseForm::homoscedastic();
  if (s == "hetero") return NoiseForm::hetero(2);
  if (s.rfind("hetero:", 0) == 0) {
    const std::string deg = s.substr(7);
    try {
      std::size_t pos = 0;
      const long d = std::stol(deg, &pos);
      if (pos != deg.size() || d < 1) throw std::invalid_argument(deg);
      return NoiseForm::hetero(static_cast<std::size_t>(d));
    } catch (const std::exception&) {
      throw Error(ErrorCode::usage, "heteroscedastic degree must be an integer >= 1, got '" + deg + "'");
    }
  }
  throw Error(ErrorCode::usage, "unknown noise form '" + s + "' (expected homo or hetero:<degree>)");
}

std::string noise_form_name(const NoiseForm& n) {
  return n.heteroscedastic ? "hetero:" + std::to_string(n.degree) : "homo";
}

void ModelSpec::validate() const {
  if (mean_degree < 1) throw Error(ErrorCode::invalid_argument, "mean polynomial degree must be >= 1");
  if (noise.heteroscedastic && noise.degree < 1) {
    throw Error(ErrorCode::invalid_argument, "heteroscedastic noise degree must be >= 1");
  }
  if (strategy != Strategy::hbr && (clamp_group_scale || !hyperpriors.empty())) {
    throw Error(ErrorCode::invalid_argument, "group-scale clamping and hyperpriors apply to hbr only");
  }
  if (clamp_group_scale && !(*clamp_group_scale > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "clamped group scale must be positive");
  }
}

Eigen::MatrixXd polynomial_basis(const Eigen::MatrixXd& z, std::size_t degree) {
  const auto n = z.rows();
  const auto p = z.cols();
  Eigen::MatrixXd phi(n, 1 + p * static_cast<Eigen::Index>(degree));
  phi.col(0).setOnes();
  Eigen::Index c = 1;
  for (Eigen::Index j = 0; j < p; ++j) {
    Eigen::VectorXd power = Eigen::VectorXd::Ones(n);
    for (std::size_t d = 0; d < degree; ++d) {
      power = power.cwiseProduct(z.col(j));
      phi.col(c++) = power;
    }
  }
  return phi;
}

// ---------------------------------------------------------------------------
// ModelStructure

ModelStructure::ModelStructure(const ModelSpec& spec, std::size_t num_covariates, std::size_t num_batches,
                               const UnitHyperpriors* hyperpriors)
    : spec_(spec),
      p_(num_covariates),
      num_batches_(num_batches),
      k_mu_(spec.mean_basis(num_covariates)),
      k_sigma_(spec.noise_basis(num_covariates)) {
  spec_.hyperpriors.clear();
  spec_.validate();
  if (num_batches_ < 1) throw Error(ErrorCode::degenerate_data, "model needs at least one batch");
  const bool hetero = spec.noise.heteroscedastic;
  const std::size_t m = num_batches_;
  auto repeat = [](const Prior& p, std::size_t n) { return std::vector<Prior>(n, p); };
  auto pick = [&](const std::vector<Prior>* given, const Prior& fallback, std::size_t n, const char* what) {
    if (!given || given->empty()) return repeat(fallback, n);
    if (given->size() != n) {
      throw Error(ErrorCode::model_mismatch, std::string("hyperprior block ") + what + " has " +
                                                 std::to_string(given->size()) + " elements, model expects " +
                                                 std::to_string(n));
    }
    for (const auto& pr : *given) {
      if (pr.support() != given->front().support()) {
        throw Error(ErrorCode::model_mismatch, std::string("hyperprior block ") + what + " mixes supports");
      }
    }
    return *given;
  };

  switch (spec.strategy) {
    case Strategy::pooling:
    case Strategy::no_pooling: {
      const std::size_t slots = spec.strategy == Strategy::pooling ? 1 : m;
      b_theta_mu_ = add_block("theta_mu", repeat(default_priors::coefficient(), slots * k_mu_));
      if (hetero) {
        b_noise_ = add_block("theta_sigma", repeat(default_priors::coefficient(), slots * k_sigma_));
      } else {
        b_noise_ = add_block("sigma_noise", repeat(default_priors::noise_sd(), slots));
      }
      break;
    }
    case Strategy::hbr: {
      if (m < 2 && !hyperpriors) {
        throw Error(ErrorCode::degenerate_data, "hbr needs at least two batches unless hyperpriors are supplied");
      }
      const Prior noise_hyper = hetero ? default_priors::coefficient() : default_priors::noise_sd();
      b_mu_mu_ = add_block("mu_theta_mu", pick(hyperpriors ? &hyperpriors->mu_theta_mu : nullptr,
                                               default_priors::coefficient(), k_mu_, "mu_theta_mu"));
      if (!spec.clamp_group_scale) {
        b_sigma_mu_ = add_block("sigma_theta_mu", pick(hyperpriors ? &hyperpriors->sigma_theta_mu : nullptr,
                                                       default_priors::group_scale(), k_mu_, "sigma_theta_mu"));
      }
      b_eta_mu_ = add_block("eta_mu", repeat(Prior::normal(0.0, 1.0), m * k_mu_));
      b_mu_sigma_ = add_block("mu_theta_sigma", pick(hyperpriors ? &hyperpriors->mu_theta_sigma : nullptr,
                                                     noise_hyper, k_sigma_, "mu_theta_sigma"));
      if (!spec.clamp_group_scale) {
        b_sigma_sigma_ =
            add_block("sigma_theta_sigma", pick(hyperpriors ? &hyperpriors->sigma_theta_sigma : nullptr,
                                                default_priors::group_scale(), k_sigma_, "sigma_theta_sigma"));
      }
      b_eta_sigma_ = add_block("eta_sigma", repeat(Prior::normal(0.0, 1.0), m * k_sigma_));
      if (!hetero && layout_.block(b_mu_sigma_).support == Support::real) {
        throw Error(ErrorCode::model_mismatch, "homoscedastic noise scale needs a positive-support hyperprior");
      }
      break;
    }
  }
}

std::size_t ModelStructure::add_block(const std::string& name, std::vector<Prior> priors) {
  const Prior& first = priors.front();
  const std::size_t id =
      layout_.add(name, priors.size(), first.support(), first.support() == Support::interval ? first.a() : 0.0,
                  first.support() == Support::interval ? first.b() : 0.0);
  priors_.push_back(std::move(priors));
  return id;
}

double ModelStructure::log_prior(std::span<const double> x, std::span<double> grad) const {
  double lp = 0.0;
  for (std::size_t b = 0; b < priors_.size(); ++b) {
    const auto& blk = layout_.block(b);
    for (std::size_t e = 0; e < blk.size; ++e) {
      double d = 0.0;
      lp += priors_[b][e].log_density(x[blk.offset + e], d);
      grad[blk.offset + e] += d;
    }
  }
  return lp;
}

std::optional<std::string> ModelStructure::non_finite_prior_block(std::span<const double> x) const {
  for (std::size_t b = 0; b < priors_.size(); ++b) {
    const auto& blk = layout_.block(b);
    for (std::size_t e = 0; e < blk.size; ++e) {
      double d = 0.0;
      if (!std::isfinite(priors_[b][e].log_density(x[blk.offset + e], d))) return blk.name;
    }
  }
  return std::nullopt;
}

void ModelStructure::effective(std::span<const double> x, Eigen::MatrixXd& beta, Eigen::MatrixXd& noise) const {
  const auto slots_n = static_cast<Eigen::Index>(slots());
  const auto k = static_cast<Eigen::Index>(k_mu_);
  const auto ks = static_cast<Eigen::Index>(k_sigma_);
  const bool hetero = spec_.noise.heteroscedastic;
  beta.resize(slots_n, k);
  noise.resize(slots_n, hetero ? ks : 1);
  if (spec_.strategy != Strategy::hbr) {
    const std::size_t om = layout_.block(b_theta_mu_).offset;
    const std::size_t on = layout_.block(b_noise_).offset;
    const Eigen::Index w = noise.cols();
    for (Eigen::Index s = 0; s < slots_n; ++s) {
      for (Eigen::Index j = 0; j < k; ++j) beta(s, j) = x[om + static_cast<std::size_t>(s * k + j)];
      for (Eigen::Index j = 0; j < w; ++j) noise(s, j) = x[on + static_cast<std::size_t>(s * w + j)];
    }
    return;
  }
  const double clamp = spec_.clamp_group_scale.value_or(0.0);
  const std::size_t o_mu = layout_.block(b_mu_mu_).offset;
  const std::size_t o_eta = layout_.block(b_eta_mu_).offset;
  for (Eigen::Index j = 0; j < k; ++j) {
    const double scale = b_sigma_mu_ == npos ? clamp : x[layout_.block(b_sigma_mu_).offset + static_cast<std::size_t>(j)];
    for (Eigen::Index s = 0; s < slots_n; ++s) {
      beta(s, j) = x[o_mu + static_cast<std::size_t>(j)] + scale * x[o_eta + static_cast<std::size_t>(s * k + j)];
    }
  }
  const std::size_t o_ms = layout_.block(b_mu_sigma_).offset;
  const std::size_t o_es = layout_.block(b_eta_sigma_).offset;
  for (Eigen::Index j = 0; j < noise.cols(); ++j) {
    const double scale =
        b_sigma_sigma_ == npos ? clamp : x[layout_.block(b_sigma_sigma_).offset + static_cast<std::size_t>(j)];
    for (Eigen::Index s = 0; s < slots_n; ++s) {
      const double eta = x[o_es + static_cast<std::size_t>(s * noise.cols() + j)];
      const double loc = x[o_ms + static_cast<std::size_t>(j)];
      noise(s, j) = hetero ? loc + scale * eta : loc * std::exp(scale * eta);
    }
  }
}

void ModelStructure::backprop(std::span<const double> x, const Eigen::MatrixXd& d_beta, const Eigen::MatrixXd& d_noise,
                              std::span<double> grad) const {
  const auto slots_n = static_cast<Eigen::Index>(slots());
  const auto k = static_cast<Eigen::Index>(k_mu_);
  const bool hetero = spec_.noise.heteroscedastic;
  if (spec_.strategy != Strategy::hbr) {
    const std::size_t om = layout_.block(b_theta_mu_).offset;
    const std::size_t on = layout_.block(b_noise_).offset;
    const Eigen::Index w = d_noise.cols();
    for (Eigen::Index s = 0; s < slots_n; ++s) {
      for (Eigen::Index j = 0; j < k; ++j) grad[om + static_cast<std::size_t>(s * k + j)] += d_beta(s, j);
      for (Eigen::Index j = 0; j < w; ++j) grad[on + static_cast<std::size_t>(s * w + j)] += d_noise(s, j);
    }
    return;
  }
  const double clamp = spec_.clamp_group_scale.value_or(0.0);
  const std::size_t o_mu = layout_.block(b_mu_mu_).offset;
  const std::size_t o_eta = layout_.block(b_eta_mu_).offset;
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const bool sampled = b_sigma_mu_ != npos;
    const double scale = sampled ? x[layout_.block(b_sigma_mu_).offset + ju] : clamp;
    double d_scale = 0.0;
    for (Eigen::Index s = 0; s < slots_n; ++s) {
      const std::size_t ie = o_eta + static_cast<std::size_t>(s * k + j);
      grad[o_mu + ju] += d_beta(s, j);
      grad[ie] += d_beta(s, j) * scale;
      d_scale += d_beta(s, j) * x[ie];
    }
    if (sampled) grad[layout_.block(b_sigma_mu_).offset + ju] += d_scale;
  }
  const std::size_t o_ms = layout_.block(b_mu_sigma_).offset;
  const std::size_t o_es = layout_.block(b_eta_sigma_).offset;
  const Eigen::Index w = d_noise.cols();
  for (Eigen::Index j = 0; j < w; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const bool sampled = b_sigma_sigma_ != npos;
    const double scale = sampled ? x[layout_.block(b_sigma_sigma_).offset + ju] : clamp;
    const double loc = x[o_ms + ju];
    double d_scale = 0.0, d_loc = 0.0;
    for (Eigen::Index s = 0; s < slots_n; ++s) {
      const std::size_t ie = o_es + static_cast<std::size_t>(s * w + j);
      const double g = d_noise(s, j);
      if (hetero) {
        d_loc += g;
        grad[ie] += g * scale;
        d_scale += g * x[ie];
      } else {
        const double sigma = loc * std::exp(scale * x[ie]);
        d_loc += g * sigma / loc;
        grad[ie] += g * sigma * scale;
        d_scale += g * sigma * x[ie];
      }
    }
    grad[o_ms + ju] += d_loc;
    if (sampled) grad[layout_.block(b_sigma_sigma_).offset + ju] += d_scale;
  }
}

// ---------------------------------------------------------------------------
// NormativeDensity

NormativeDensity::NormativeDensity(ModelStructure structure, const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                   std::vector<std::size_t> batch)
    : structure_(std::move(structure)), y_(y) {
  const auto& spec = structure_.spec();
  if (static_cast<std::size_t>(z.rows()) != batch.size() || z.rows() != y.size()) {
    throw Error(ErrorCode::invalid_argument, "density inputs disagree in row count");
  }
  phi_ = polynomial_basis(z, spec.mean_degree);
  if (spec.noise.heteroscedastic) psi_ = polynomial_basis(z, spec.noise.degree);
  slot_.reserve(batch.size());
  for (auto b : batch) {
    if (b >= structure_.num_batches()) throw Error(ErrorCode::invalid_argument, "batch index out of range");
    slot_.push_back(structure_.slot_of(b));
  }
  if (!spec.noise.heteroscedastic) {
    const std::size_t slots = structure_.slots();
    const auto k = static_cast<Eigen::Index>(structure_.mean_basis());
    count_.assign(slots, 0.0);
    syy_.assign(slots, 0.0);
    sphy_.assign(slots, Eigen::VectorXd::Zero(k));
    sphph_.assign(slots, Eigen::MatrixXd::Zero(k, k));
    for (Eigen::Index r = 0; r < phi_.rows(); ++r) {
      const std::size_t s = slot_[static_cast<std::size_t>(r)];
      const Eigen::VectorXd f = phi_.row(r).transpose();
      count_[s] += 1.0;
      syy_[s] += y_(r) * y_(r);
      sphy_[s] += f * y_(r);
      sphph_[s].noalias() += f * f.transpose();
    }
  }
}

double NormativeDensity::log_likelihood(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& noise,
                                        Eigen::MatrixXd& d_beta, Eigen::MatrixXd& d_noise) const {
  d_beta.setZero(beta.rows(), beta.cols());
  d_noise.setZero(noise.rows(), noise.cols());
  if (!structure_.spec().noise.heteroscedastic) {
    double ll = 0.0;
    for (std::size_t s = 0; s < count_.size(); ++s) {
      if (count_[s] == 0.0) continue;
      const auto si = static_cast<Eigen::Index>(s);
      const Eigen::VectorXd b = beta.row(si).transpose();
      const Eigen::VectorXd sb = sphph_[s] * b;
      const double q = syy_[s] - 2.0 * b.dot(sphy_[s]) + b.dot(sb);
      const double sigma = noise(si, 0);
      const double inv_var = 1.0 / (sigma * sigma);
      ll += -count_[s] * (std::log(sigma) + 0.5 * log_two_pi) - 0.5 * q * inv_var;
      d_beta.row(si) = ((sphy_[s] - sb) * inv_var).transpose();
      d_noise(si, 0) = -count_[s] / sigma + q * inv_var / sigma;
    }
    return ll;
  }
  double ll = 0.0;
  for (Eigen::Index r = 0; r < phi_.rows(); ++r) {
    const auto s = static_cast<Eigen::Index>(slot_[static_cast<std::size_t>(r)]);
    const double mu = phi_.row(r).dot(beta.row(s));
    const double t = psi_.row(r).dot(noise.row(s));
    const double sigma = softplus(t);
    const double e = y_(r) - mu;
    const double inv_var = 1.0 / (sigma * sigma);
    ll += -log_softplus(t) - 0.5 * log_two_pi - 0.5 * e * e * inv_var;
    d_beta.row(s) += (e * inv_var) * phi_.row(r);
    const double d_sigma = -1.0 / sigma + e * e * inv_var / sigma;
    d_noise.row(s) += (d_sigma * logistic(t)) * psi_.row(r);
  }
  return ll;
}

double NormativeDensity::row_log_likelihood(std::span<const double> x, Eigen::MatrixXd* d_beta,
                                            Eigen::MatrixXd* d_noise) const {
  Eigen::MatrixXd beta, noise;
  structure_.effective(x, beta, noise);
  Eigen::MatrixXd db = Eigen::MatrixXd::Zero(beta.rows(), beta.cols());
  Eigen::MatrixXd dn = Eigen::MatrixXd::Zero(noise.rows(), noise.cols());
  const bool hetero = structure_.spec().noise.heteroscedastic;
  double ll = 0.0;
  for (Eigen::Index r = 0; r < phi_.rows(); ++r) {
    const auto s = static_cast<Eigen::Index>(slot_[static_cast<std::size_t>(r)]);
    const double mu = phi_.row(r).dot(beta.row(s));
    const double t = hetero ? psi_.row(r).dot(noise.row(s)) : 0.0;
    const double sigma = hetero ? softplus(t) : noise(s, 0);
    const double e = y_(r) - mu;
    ll += normal_log_density(y_(r), mu, sigma);
    db.row(s) += (e / (sigma * sigma)) * phi_.row(r);
    const double d_sigma = -1.0 / sigma + e * e / (sigma * sigma * sigma);
    if (hetero) {
      dn.row(s) += (d_sigma * logistic(t)) * psi_.row(r);
    } else {
      dn(s, 0) += d_sigma;
    }
  }
  if (d_beta) *d_beta = std::move(db);
  if (d_noise) *d_noise = std::move(dn);
  return ll;
}

double NormativeDensity::constrained_log_density(std::span<const double> x, std::span<double> grad_x) const {
  std::fill(grad_x.begin(), grad_x.end(), 0.0);
  const double lp = structure_.log_prior(x, grad_x);
  if (!std::isfinite(lp)) return lp;
  Eigen::MatrixXd beta, noise, d_beta, d_noise;
  structure_.effective(x, beta, noise);
  const double ll = log_likelihood(beta, noise, d_beta, d_noise);
  structure_.backprop(x, d_beta, d_noise, grad_x);
  return lp + ll;
}

std::string NormativeDensity::locate_non_finite(std::span<const double> u) const {
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!std::isfinite(u[i])) return layout().owner(i).name;
  }
  std::vector<double> x(layout().dim());
  layout().constrain(u, x);
  if (auto b = structure_.non_finite_prior_block(x)) return *b;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) return layout().owner(i).name;
  }
  return "likelihood";
}

std::unique_ptr<NormativeDensity> build_density(const ModelSpec& spec, const Dataset& ds, std::size_t unit,
                                                const Standardizer& standardizer, const BatchIndex& batches) {
  if (unit >= ds.num_units()) throw Error(ErrorCode::invalid_argument, "unit index out of range");
  const UnitHyperpriors* hyper = nullptr;
  if (!spec.hyperpriors.empty()) {
    if (spec.hyperpriors.size() != ds.num_units()) {
      throw Error(ErrorCode::model_mismatch, "hyperprior pack covers " + std::to_string(spec.hyperpriors.size()) +
                                                 " units, data has " + std::to_string(ds.num_units()));
    }
    hyper = &spec.hyperpriors[unit];
  }
  ModelStructure structure(spec, ds.num_covariates(), batches.size(), hyper);
  const Eigen::MatrixXd z = standardizer.transform_covariates(ds.covariates);
  const Eigen::VectorXd y = standardizer.transform_response(unit, ds.responses.col(static_cast<Eigen::Index>(unit)));
  std::vector<std::size_t> idx;
  idx.reserve(ds.rows());
  for (const auto& l : ds.batch_labels) idx.push_back(batches.at(l));
  return std::make_unique<NormativeDensity>(std::move(structure), z, y, std::move(idx));
}

std::unique_ptr<NormativeDensity> build_density(const ModelSpec& spec, const Dataset& ds, std::size_t unit) {
  return build_density(spec, ds, unit, Standardizer::fit(ds), BatchIndex(ds.batch_labels));
}

// ---------------------------------------------------------------------------
// fit / predict

BatchIndex FittedNormativeModel::batch_index() const { return BatchIndex(batch_labels); }

ModelStructure FittedNormativeModel::structure(std::size_t unit) const {
  ModelSpec s = spec;
  const UnitHyperpriors* hyper = s.hyperpriors.empty() ? nullptr : &s.hyperpriors.at(unit);
  return ModelStructure(s, covariate_names.size(), batch_labels.size(), hyper);
}

std::size_t FittedNormativeModel::unit_index(const std::string& name) const {
  for (std::size_t j = 0; j < units.size(); ++j) {
    if (units[j].name == name) return j;
  }
  throw Error(ErrorCode::schema, "model has no unit named '" + name + "'");
}

std::vector<std::string> FittedNormativeModel::response_names() const {
  std::vector<std::string> out;
  for (const auto& u : units) out.push_back(u.name);
  return out;
}

namespace {

void check_fit_preconditions(const ModelSpec& spec, const Dataset& ds, const BatchIndex& batches) {
  const std::size_t need = ds.num_covariates() + 2;
  switch (spec.strategy) {
    case Strategy::pooling:
      if (ds.rows() < need) {
        throw Error(ErrorCode::degenerate_data, "pooling needs at least " + std::to_string(need) + " rows");
      }
      break;
    case Strategy::no_pooling: {
      std::vector<std::vector<std::size_t>> rows(batches.size());
      for (std::size_t i = 0; i < ds.rows(); ++i) rows[batches.at(ds.batch_labels[i])].push_back(i);
      for (std::size_t b = 0; b < batches.size(); ++b) {
        if (rows[b].size() < need) {
          throw Error(ErrorCode::degenerate_data, "batch '" + batches.labels()[b] + "' has " +
                                                      std::to_string(rows[b].size()) + " rows; no-pooling needs " +
                                                      std::to_string(need));
        }
        for (Eigen::Index j = 0; j < ds.covariates.cols(); ++j) {
          const double first = ds.covariates(static_cast<Eigen::Index>(rows[b][0]), j);
          bool constant = true;
          for (auto r : rows[b]) constant = constant && ds.covariates(static_cast<Eigen::Index>(r), j) == first;
          if (constant) {
            throw Error(ErrorCode::degenerate_data, "covariate '" + ds.covariate_names[static_cast<std::size_t>(j)] +
                                                        "' is constant within batch '" + batches.labels()[b] + "'");
          }
        }
      }
      break;
    }
    case Strategy::hbr:
      if (batches.size() < 2 && spec.hyperpriors.empty()) {
        throw Error(ErrorCode::degenerate_data, "hbr needs at least two batches unless hyperpriors are supplied");
      }
      if (ds.rows() < need) {
        throw Error(ErrorCode::degenerate_data, "hbr needs at least " + std::to_string(need) + " rows");
      }
      break;
  }
}

Standardizer select_standardizer_units(const Standardizer& s, const std::vector<std::size_t>& units) {
  Standardizer out = s;
  out.response_mean.resize(static_cast<Eigen::Index>(units.size()));
  out.response_variance.resize(static_cast<Eigen::Index>(units.size()));
  for (std::size_t j = 0; j < units.size(); ++j) {
    out.response_mean(static_cast<Eigen::Index>(j)) = s.response_mean(static_cast<Eigen::Index>(units[j]));
    out.response_variance(static_cast<Eigen::Index>(j)) = s.response_variance(static_cast<Eigen::Index>(units[j]));
  }
  return out;
}

}  // namespace

FittedNormativeModel fit(const ModelSpec& spec, const Dataset& ds, const FitOptions& options) {
  spec.validate();
  ds.validate();
  options.sampler.validate();
  if (options.sampler.chains < 2) throw Error(ErrorCode::invalid_argument, "fitting needs at least two chains");
  const Standardizer standardizer = options.standardizer ? *options.standardizer : Standardizer::fit(ds);
  if (static_cast<std::size_t>(standardizer.response_mean.size()) != ds.num_units()) {
    throw Error(ErrorCode::model_mismatch, "standardizer covers a different number of units than the data");
  }
  const BatchIndex batches(ds.batch_labels);
  check_fit_preconditions(spec, ds, batches);

  std::vector<std::size_t> units = options.units;
  if (units.empty()) {
    for (std::size_t j = 0; j < ds.num_units(); ++j) units.push_back(j);
  }

  FittedNormativeModel model;
  model.spec = spec;
  model.covariate_names = ds.covariate_names;
  model.batch_dimensions = ds.batch_dimensions;
  model.batch_labels = batches.labels();
  model.standardizer = select_standardizer_units(standardizer, units);
  model.units.resize(units.size());
  if (!spec.hyperpriors.empty()) {
    model.spec.hyperpriors.clear();
    for (auto j : units) model.spec.hyperpriors.push_back(spec.hyperpriors.at(j));
  }

  parallel_for(units.size(), options.jobs, [&](std::size_t i) {
    const std::size_t unit = units[i];
    const auto density = build_density(spec, ds, unit, standardizer, batches);
    SamplerConfig cfg = options.sampler;
    cfg.stream = unit;
    if (options.jobs > 1) cfg.threads = 1;
    UnitFit uf;
    uf.name = ds.response_names[unit];
    try {
      uf.draws = sample_nuts(*density, cfg);
    } catch (const Error& e) {
      throw Error(e.code(), "unit '" + uf.name + "': " + e.what());
    }
    uf.diagnostics = diagnostics(uf.draws);
    model.units[i] = std::move(uf);
  });

  std::size_t bad = 0;
  std::ostringstream names;
  for (const auto& u : model.units) {
    if (u.diagnostics.max_rhat > options.rhat_fail) {
      if (bad < 5) names << (bad ? ", " : "") << u.name << " (R-hat " << u.diagnostics.max_rhat << ")";
      ++bad;
    }
  }
  if (static_cast<double>(bad) > options.max_bad_unit_fraction * static_cast<double>(model.units.size())) {
    throw Error(ErrorCode::diagnostics, std::to_string(bad) + " of " + std::to_string(model.units.size()) +
                                            " units failed to converge: " + names.str());
  }
  return model;
}

namespace {

struct SlotMoments {
  Eigen::VectorXd mean;      // E[beta]
  Eigen::MatrixXd cov;       // Cov[beta]
  double mean_noise_sq = 0;  // E[sigma^2], homoscedastic
};

}  // namespace

Prediction predict(const FittedNormativeModel& model, const Eigen::MatrixXd& covariates,
                   const std::vector<std::string>& batch_labels) {
  if (static_cast<std::size_t>(covariates.rows()) != batch_labels.size()) {
    throw Error(ErrorCode::invalid_argument, "covariates and batch labels disagree in row count");
  }
  if (static_cast<std::size_t>(covariates.cols()) != model.covariate_names.size()) {
    throw Error(ErrorCode::model_mismatch, "model expects " + std::to_string(model.covariate_names.size()) +
                                               " covariates, got " + std::to_string(covariates.cols()));
  }
  const auto n = covariates.rows();
  const auto u = static_cast<Eigen::Index>(model.units.size());
  const bool hetero = model.spec.noise.heteroscedastic;
  const BatchIndex batches = model.batch_index();
  const bool pooled = model.spec.strategy == Strategy::pooling;

  std::vector<std::size_t> slot(static_cast<std::size_t>(n), 0);
  if (!pooled) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& label = batch_labels[static_cast<std::size_t>(r)];
      const auto b = batches.find(label);
      if (!b) {
        throw Error(ErrorCode::unknown_batch, "batch '" + label +
                                                  "' was not present at fit time; recalibrate with a hyperprior "
                                                  "pack or use priors-only prediction");
      }
      slot[static_cast<std::size_t>(r)] = *b;
    }
  }

  const Eigen::MatrixXd z = model.standardizer.transform_covariates(covariates);
  const Eigen::MatrixXd phi = polynomial_basis(z, model.spec.mean_degree);
  const Eigen::MatrixXd psi = hetero ? polynomial_basis(z, model.spec.noise.degree) : Eigen::MatrixXd();

  Prediction out{Eigen::MatrixXd(n, u), Eigen::MatrixXd(n, u)};
  for (Eigen::Index j = 0; j < u; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const ModelStructure st = model.structure(ju);
    const PosteriorDraws& draws = model.units[ju].draws;
    const std::size_t total = draws.total();
    const std::size_t slots = st.slots();
    const auto k = static_cast<Eigen::Index>(st.mean_basis());

    std::vector<SlotMoments> mom(slots, SlotMoments{Eigen::VectorXd::Zero(k), Eigen::MatrixXd::Zero(k, k), 0.0});
    std::vector<Eigen::MatrixXd> noise_draws;
    if (hetero) noise_draws.reserve(total);
    Eigen::MatrixXd beta, noise;
    for (std::size_t d = 0; d < total; ++d) {
      st.effective(draws.draw(d), beta, noise);
      for (std::size_t s = 0; s < slots; ++s) {
        const auto si = static_cast<Eigen::Index>(s);
        const Eigen::VectorXd b = beta.row(si).transpose();
        mom[s].mean += b;
        mom[s].cov.noalias() += b * b.transpose();
        if (!hetero) mom[s].mean_noise_sq += noise(si, 0) * noise(si, 0);
      }
      if (hetero) noise_draws.push_back(noise);
    }
    const double inv_total = 1.0 / static_cast<double>(total);
    for (auto& m : mom) {
      m.mean *= inv_total;
      m.cov = m.cov * inv_total - m.mean * m.mean.transpose();
      m.mean_noise_sq *= inv_total;
    }

    const double y_mean = model.standardizer.response_mean(j);
    const double y_sd = model.standardizer.response_sd(ju);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& m = mom[slot[static_cast<std::size_t>(r)]];
      const Eigen::VectorXd f = phi.row(r).transpose();
      const double mean_std = f.dot(m.mean);
      const double var_mu = std::max(0.0, f.dot(m.cov * f));
      double noise_sq = m.mean_noise_sq;
      if (hetero) {
        noise_sq = 0.0;
        const auto s = static_cast<Eigen::Index>(slot[static_cast<std::size_t>(r)]);
        for (const auto& nd : noise_draws) {
          const double sigma = softplus(psi.row(r).dot(nd.row(s)));
          noise_sq += sigma * sigma;
        }
        noise_sq *= inv_total;
      }
      out.mean(r, j) = y_mean + y_sd * mean_std;
      out.sd(r, j) = y_sd * std::sqrt(noise_sq + var_mu);
    }
  }
  return out;
}

DeviationReport deviation_report(const Eigen::MatrixXd& y, const Prediction& pred) {
  if (y.rows() != pred.mean.rows() || y.cols() != pred.mean.cols()) {
    throw Error(ErrorCode::invalid_argument, "responses and predictions disagree in shape");
  }
  DeviationReport r;
  r.mean = pred.mean;
  r.sd = pred.sd;
  r.z = (y - pred.mean).array() / pred.sd.array();
  r.p = r.z.unaryExpr([](double z) { return two_sided_p(z); });
  return r;
}

DeviationReport deviations(const FittedNormativeModel& model, const Dataset& ds_test) {
  ds_test.validate();
  Eigen::MatrixXd y(ds_test.responses.rows(), static_cast<Eigen::Index>(model.units.size()));
  for (std::size_t j = 0; j < model.units.size(); ++j) {
    const auto& names = ds_test.response_names;
    const auto it = std::find(names.begin(), names.end(), model.units[j].name);
    if (it == names.end()) throw Error(ErrorCode::schema, "test data lacks unit '" + model.units[j].name + "'");
    y.col(static_cast<Eigen::Index>(j)) = ds_test.responses.col(it - names.begin());
  }
  return deviation_report(y, predict(model, ds_test.covariates, ds_test.batch_labels));
}

Eigen::MatrixXd coefficient_draws(const FittedNormativeModel& model, std::size_t unit, std::size_t batch) {
  const ModelStructure st = model.structure(unit);
  const PosteriorDraws& draws = model.units.at(unit).draws;
  const std::size_t s = st.slot_of(batch);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(draws.total()), static_cast<Eigen::Index>(st.mean_basis()));
  Eigen::MatrixXd beta, noise;
  for (std::size_t d = 0; d < draws.total(); ++d) {
    st.effective(draws.draw(d), beta, noise);
    out.row(static_cast<Eigen::Index>(d)) = beta.row(static_cast<Eigen::Index>(s));
  }
  return out;
}

Eigen::VectorXd noise_sd_draws(const FittedNormativeModel& model, std::size_t unit, std::size_t batch) {
  if (model.spec.noise.heteroscedastic) {
    throw Error(ErrorCode::invalid_argument, "noise sd draws are defined for homoscedastic models only");
  }
  const ModelStructure st = model.structure(unit);
  const PosteriorDraws& draws = model.units.at(unit).draws;
  const std::size_t s = st.slot_of(batch);
  Eigen::VectorXd out(static_cast<Eigen::Index>(draws.total()));
  Eigen::MatrixXd beta, noise;
  for (std::size_t d = 0; d < draws.total(); ++d) {
    st.effective(draws.draw(d), beta, noise);
    out(static_cast<Eigen::Index>(d)) = noise(static_cast<Eigen::Index>(s), 0);
  }
  return out;
}

Eigen::VectorXd block_draws(const FittedNormativeModel& model, std::size_t unit, const std::string& block,
                            std::size_t element) {
  const PosteriorDraws& draws = model.units.at(unit).draws;
  const auto& b = draws.layout.at(block);
  if (element >= b.size) throw Error(ErrorCode::invalid_argument, "block element out of range");
  return draws.parameter(b.offset + element);
}

Eigen::VectorXd raw_linear_coefficients(const Standardizer& s, std::size_t unit, const Eigen::VectorXd& beta) {
  const auto p = s.covariate_mean.size();
  if (beta.size() != p + 1) throw Error(ErrorCode::invalid_argument, "raw coefficients need a linear mean");
  const double y_sd = s.response_sd(unit);
  Eigen::VectorXd raw(p + 1);
  double intercept = beta(0);
  for (Eigen::Index j = 0; j < p; ++j) {
    raw(j + 1) = y_sd * beta(j + 1) / s.covariate_sd(j);
    intercept -= beta(j + 1) * s.covariate_mean(j) / s.covariate_sd(j);
  }
  raw(0) = s.response_mean(static_cast<Eigen::Index>(unit)) + y_sd * intercept;
  return raw;
}

}  // namespace hbrnorm
