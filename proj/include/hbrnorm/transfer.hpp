#ifndef HBRNORM_TRANSFER_HPP
#define HBRNORM_TRANSFER_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "hbrnorm/archive.hpp"
#include "hbrnorm/models.hpp"

namespace hbrnorm {

/// Hyperparameter posteriors of a reference hbr model, reduced to
/// parametric priors. Carries everything recalibration needs; the reference
/// data and draws are not part of it.
struct HyperpriorPack {
  /// Structural spec of the reference (hyperpriors field empty).
  ModelSpec spec;
  std::vector<std::string> covariate_names;
  std::vector<std::string> unit_names;
  /// Batch labels of the reference, so new data can be checked for overlap.
  std::vector<std::string> reference_batches;
  std::vector<UnitHyperpriors> hyperpriors;
  /// Reference standardization; recalibration reuses it so the priors keep
  /// their meaning.
  Standardizer standardizer;
  /// Posterior means of mu_theta_mu / mu_theta_sigma per unit (standardized).
  std::vector<Eigen::VectorXd> mu_theta_mu_mean;
  std::vector<Eigen::VectorXd> mu_theta_sigma_mean;
  std::string reference_hash;
  std::size_t draw_count = 0;

  std::size_t unit_index(const std::string& name) const;
  bool operator==(const HyperpriorPack&) const = default;
};

struct DistillOptions {
  double min_ess = 100.0;
  /// Reference units with R-hat above this are rejected.
  double rhat_fail = 1.05;
};

/// Normal(mean, sd) for real-valued hyperparameters, log-normal of the
/// log-draws for positive ones. Scales are floored at 1e-3 |loc| + 1e-6.
HyperpriorPack distill(const FittedNormativeModel& reference, const DistillOptions& options = {});

/// The distilled prior for one element from its draws.
Prior distill_element(const Eigen::VectorXd& draws, Support support);

/// Fits hbr on ds_new (new batches only) with the pack's hyperpriors.
/// spec must match the pack structurally; its hyperpriors field is ignored.
FittedNormativeModel recalibrate(const HyperpriorPack& pack, const Dataset& ds_new, const ModelSpec& spec,
                                 const FitOptions& options);

/// Predicts every row from the hyper-means alone, without refitting: the
/// batch coefficients are the posterior mean of mu_theta_mu and the noise is
/// the posterior mean of mu_theta_sigma. No epistemic term.
Prediction predict_priors_only(const HyperpriorPack& pack, const Eigen::MatrixXd& covariates);

Archive pack_to_archive(const HyperpriorPack& pack);
HyperpriorPack pack_from_archive(const Archive& a);
void save_pack(const std::string& path, const HyperpriorPack& pack);
HyperpriorPack load_pack(const std::string& path);
std::string pack_hash(const HyperpriorPack& pack);

}  // namespace hbrnorm

#endif
