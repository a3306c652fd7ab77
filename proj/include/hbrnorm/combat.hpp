#ifndef HBRNORM_COMBAT_HPP
#define HBRNORM_COMBAT_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "hbrnorm/archive.hpp"
#include "hbrnorm/data.hpp"
#include "hbrnorm/models.hpp"

namespace hbrnorm {

/// Empirical-Bayes location/scale harmonization. One column per response
/// unit, one row per batch where applicable. Batch effects live on the
/// standardized residual scale: y = g(x) + sigma * (gamma + sqrt(delta2) * e).
struct CombatModel {
  std::vector<std::string> design;  // covariate names kept in g(x)
  Eigen::VectorXd design_mean;      // centring of the design covariates
  Eigen::VectorXd design_sd;
  std::vector<std::string> batch_labels;
  std::vector<std::string> unit_names;

  Eigen::VectorXd alpha;        // grand intercept per unit
  Eigen::MatrixXd beta;         // design slopes on standardized covariates (p x u)
  Eigen::VectorXd sigma;        // pooled residual sd per unit
  Eigen::MatrixXd gamma_hat;    // least-squares additive effects (m x u)
  Eigen::MatrixXd delta2_hat;   // per-batch residual variances (m x u)
  Eigen::MatrixXd gamma_star;   // shrunk additive effects (m x u)
  Eigen::MatrixXd delta2_star;  // shrunk multiplicative effects, squared (m x u)
  Eigen::VectorXd gamma_bar, tau2, lambda, theta;
  std::vector<std::size_t> iterations;

  bool identity() const { return batch_labels.size() <= 1; }
  /// Additive effect on the response scale: sigma * gamma*.
  Eigen::MatrixXd additive_effects() const;
  /// Multiplicative effect: sqrt(delta2*).
  Eigen::MatrixXd multiplicative_effects() const;
  /// g(x) per row and unit.
  Eigen::MatrixXd design_mean_at(const Dataset& ds) const;

  bool operator==(const CombatModel&) const = default;
};

struct CombatOptions {
  double tolerance = 1e-4;
  std::size_t max_iterations = 100;
};

/// design: covariate names preserved by the adjustment (may be empty).
CombatModel combat_fit(const Dataset& ds, const std::vector<std::string>& design, const CombatOptions& options = {});
Dataset combat_apply(const CombatModel& model, const Dataset& ds);

/// Maps a prediction made in harmonized space back to the raw scale of the
/// rows' batches (mean and sd).
Prediction combat_unharmonize(const CombatModel& model, const Dataset& ds, const Prediction& harmonized);

Archive combat_to_archive(const CombatModel& model);
CombatModel combat_from_archive(const Archive& a);
void save_combat(const std::string& path, const CombatModel& model);
CombatModel load_combat(const std::string& path);

}  // namespace hbrnorm

#endif
