#ifndef HBRNORM_EXPERIMENTS_HPP
#define HBRNORM_EXPERIMENTS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hbrnorm/evaluation.hpp"
#include "hbrnorm/models.hpp"
#include "hbrnorm/synthgen.hpp"

namespace hbrnorm {

/// Scaled-down multi-site regression comparison: hbr, no-pooling, pooling,
/// and ComBat followed by pooling, all scored on held-out rows.
struct RegressionSetting {
  GenConfig gen;
  double train_fraction = 0.5;
  SamplerConfig sampler;
  std::size_t jobs = 1;
  /// Site probe on the test deviations. Needs at least probe.folds test
  /// rows per site.
  bool run_probe = false;
  SiteProbeOptions probe;

  /// Sites of unequal, mostly small size whose age bands partly overlap,
  /// so batch effects correlate with the covariate.
  static RegressionSetting defaults();
  /// Large balanced sites for the site probe; per-site estimation error in
  /// the deviations shrinks with training size.
  static RegressionSetting balanced();
};

struct MethodResult {
  std::string method;
  MetricReport metrics;
  std::optional<SiteProbeResult> probe;
};

struct RegressionOutcome {
  std::uint64_t seed = 0;
  std::vector<MethodResult> methods;  // hbr, nopool, pooling, combat+pooling

  const MethodResult& method(const std::string& name) const;
};

RegressionOutcome run_regression_setting(const RegressionSetting& setting, std::uint64_t seed);

/// Reference model on some sites, recalibration on half of the healthy rows
/// of new sites per repetition, anomaly detection on the rest plus patients.
struct AnomalySetting {
  GenConfig gen;
  std::size_t reference_sites = 8;
  double recalibration_fraction = 0.5;
  std::size_t repetitions = default_anomaly_repetitions;
  SamplerConfig reference_sampler;
  SamplerConfig recalibration_sampler;
  AnomalyOptions anomaly;
  std::size_t jobs = 1;

  static AnomalySetting defaults();
};

struct AnomalyOutcome {
  std::uint64_t seed = 0;
  /// Per repetition: hbr (recalibrated), pooling, priors-only metrics on
  /// the held-out healthy rows of the new sites.
  std::vector<std::map<std::string, MetricReport>> regression;
  AnomalyReport report;
  std::vector<std::size_t> planted_units;
};

AnomalyOutcome run_anomaly_setting(const AnomalySetting& setting, std::uint64_t seed);

/// Pools per-repetition metrics of one method into a single report.
MetricReport concat_metrics(const std::vector<MetricReport>& reports);

}  // namespace hbrnorm

#endif
