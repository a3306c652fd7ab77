#ifndef HBRNORM_EVALUATION_HPP
#define HBRNORM_EVALUATION_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hbrnorm/data.hpp"

namespace hbrnorm {

struct MetricReport {
  /// Per unit. rho is missing where either side has zero variance.
  std::vector<std::optional<double>> rho;
  Eigen::VectorXd smse;
  Eigen::VectorXd msll;

  double median_rho() const;
  double median_smse() const;
  double median_msll() const;
};

double median(std::vector<double> v);

/// Baseline: Gaussian with the training mean and variance of each unit.
MetricReport regression_metrics(const Eigen::MatrixXd& pred_mean, const Eigen::MatrixXd& pred_sd,
                                const Eigen::MatrixXd& y_test, const Eigen::VectorXd& train_mean,
                                const Eigen::VectorXd& train_variance);
MetricReport regression_metrics(const Eigen::MatrixXd& pred_mean, const Eigen::MatrixXd& pred_sd,
                                const Eigen::MatrixXd& y_test, const Standardizer& train);

std::optional<double> pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct SiteProbeOptions {
  std::size_t folds = 5;
  double lambda = 1e-3;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
};

struct SiteProbeResult {
  double balanced_accuracy = 0.0;
  double chance = 0.0;
  /// Binomial SE of an accuracy at chance for this many rows.
  double chance_se = 0.0;
  /// One-sided binomial tail P(X >= correct) at the chance rate.
  double p_value = 1.0;
  std::size_t rows = 0;
  std::size_t classes = 0;
};

/// One-vs-all linear hinge-loss classifier on deviation vectors with
/// stratified k-fold cross-validation.
SiteProbeResult site_probe(const Eigen::MatrixXd& z, const std::vector<std::string>& labels,
                           const SiteProbeOptions& options = {});

/// Mann-Whitney AUC of patient vs healthy scores (ties count one half).
double auc(const Eigen::VectorXd& healthy, const Eigen::VectorXd& patients);

struct AnomalyOptions {
  std::size_t permutations = 1000;
  double alpha = 0.05;
  /// Score is |z| by default; signed z when false.
  bool absolute = true;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t default_anomaly_repetitions = 10;

/// Deviations of one repetition: z per row and unit with each row's group tag.
struct GroupedDeviations {
  Eigen::MatrixXd z;
  std::vector<std::string> groups;
};

struct UnitAnomaly {
  std::vector<double> auc;  // per repetition
  std::vector<double> p;
  std::size_t significant = 0;
  bool stable = false;
  /// Sign of mean patient z minus mean healthy z, averaged over repetitions.
  int direction = 0;
};

struct AnomalyReport {
  std::vector<std::string> unit_names;
  /// diagnosis -> per-unit result
  std::map<std::string, std::vector<UnitAnomaly>> diagnoses;
  std::size_t repetitions = 0;
  AnomalyOptions options;

  /// Units flagged stable for a diagnosis.
  std::vector<std::size_t> stable_units(const std::string& diagnosis) const;
};

AnomalyReport anomaly_auc(const std::vector<GroupedDeviations>& repetitions, const std::vector<std::string>& unit_names,
                          const AnomalyOptions& options = {});
/// Single deviation set; the permutation test is repeated with fresh seeds.
AnomalyReport anomaly_auc(const GroupedDeviations& deviations, const std::vector<std::string>& unit_names,
                          std::size_t repetitions, const AnomalyOptions& options = {});

}  // namespace hbrnorm

#endif
