#ifndef HBRNORM_SYNTHGEN_HPP
#define HBRNORM_SYNTHGEN_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hbrnorm/data.hpp"

namespace hbrnorm {

/// Simulation settings. Loaded from a `key = value` file; every key is
/// optional. Parameters are on the raw response scale.
struct GenConfig {
  std::size_t sites = 10;
  /// One entry, or one per site.
  std::vector<std::size_t> site_sizes{100};
  std::size_t units = 1;
  std::string covariate_name = "age";
  double covariate_low = 8.0;
  double covariate_high = 97.0;
  /// "uniform" or "gaussian" (mean at the centre of the site's range,
  /// sd a quarter of its width, clipped to it).
  std::string covariate_distribution = "uniform";
  /// 0: every site spans the full range; 1: sites cover disjoint bands.
  double confound = 0.0;

  double intercept_mean = 2.5;
  double intercept_sd = 0.3;
  double slope_mean = -0.01;
  double slope_sd = 0.003;
  /// Batch noise sd is log-normal: exp(N(noise_log_mean, noise_log_sd^2)).
  double noise_log_mean = -1.9;
  double noise_log_sd = 0.3;
  /// Noise sd at x is sigma * (1 + h u^2), u in [-1, 1] across the full range.
  double hetero_quadratic = 0.0;

  /// Adds a second batch dimension "gender" with values F/M.
  bool gender = false;

  /// Patients per site, with an additive shift of patient_effect noise sds
  /// in the listed units.
  std::size_t patients_per_site = 0;
  std::vector<std::size_t> patient_units;
  double patient_effect = 1.5;
  std::string diagnosis = "dx";

  static GenConfig from_key_values(const std::map<std::string, std::string>& kv);
  static GenConfig load(const std::string& path);
  std::map<std::string, std::string> to_key_values() const;
  void validate() const;
  std::size_t site_size(std::size_t site) const;
};

struct GroundTruth {
  std::vector<std::string> batch_labels;  // dense order used below
  /// Per unit: batches x 3 (intercept, slope, sigma).
  std::vector<Eigen::MatrixXd> batch_params;
  std::vector<std::size_t> row_batch;
  Eigen::VectorXd x;
  /// Standard-normal noise per row and unit.
  Eigen::MatrixXd eps;
  /// Mean shift per row and unit, in noise sds.
  Eigen::MatrixXd shift;
  double covariate_low = 0.0;
  double covariate_high = 0.0;
  double hetero_quadratic = 0.0;

  /// Noise sd of a row for a unit.
  double noise_sd(std::size_t row, std::size_t unit) const;
  /// Mean of a healthy row for a unit.
  double mean(std::size_t row, std::size_t unit) const;
  /// Recomputes every response from the latent values.
  Eigen::MatrixXd responses() const;
  std::size_t batch(const std::string& label) const;
};

std::pair<Dataset, GroundTruth> generate(const GenConfig& cfg, std::uint64_t seed);

}  // namespace hbrnorm

#endif
