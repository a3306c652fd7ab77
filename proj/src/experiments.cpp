#include "hbrnorm/experiments.hpp"

#include <algorithm>

#include "hbrnorm/combat.hpp"
#include "hbrnorm/error.hpp"
#include "hbrnorm/transfer.hpp"

namespace hbrnorm {

namespace {

FitOptions fit_options(const SamplerConfig& sampler, std::size_t jobs) {
  FitOptions o;
  o.sampler = sampler;
  o.jobs = jobs;
  return o;
}

MethodResult score(const std::string& method, const Prediction& pred, const Dataset& test, const Standardizer& train,
                   const std::optional<SiteProbeOptions>& probe) {
  MethodResult r;
  r.method = method;
  r.metrics = regression_metrics(pred.mean, pred.sd, test.responses, train);
  if (probe) {
    const DeviationReport dev = deviation_report(test.responses, pred);
    r.probe = site_probe(dev.z, test.batch_labels, *probe);
  }
  return r;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  Dataset out = a;
  out.covariates.resize(a.covariates.rows() + b.covariates.rows(), a.covariates.cols());
  out.covariates << a.covariates, b.covariates;
  out.responses.resize(a.responses.rows() + b.responses.rows(), a.responses.cols());
  out.responses << a.responses, b.responses;
  auto append = [](std::vector<std::string>& dst, const std::vector<std::string>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
  };
  append(out.batch_labels, b.batch_labels);
  append(out.subject_ids, b.subject_ids);
  append(out.groups, b.groups);
  out.validate();
  return out;
}

}  // namespace

RegressionSetting RegressionSetting::defaults() {
  RegressionSetting s;
  s.gen.sites = 10;
  s.gen.site_sizes = {16, 20, 24, 30, 40, 60, 80, 120, 160, 240};
  s.gen.units = 5;
  s.gen.intercept_sd = 0.15;
  s.gen.slope_sd = 0.002;
  s.gen.noise_log_sd = 0.2;
  s.gen.confound = 0.5;
  s.sampler.chains = 2;
  s.sampler.warmup = 1000;
  s.sampler.draws = 1000;
  return s;
}

RegressionSetting RegressionSetting::balanced() {
  RegressionSetting s = defaults();
  s.gen.site_sizes = {1250};
  s.gen.units = 3;
  s.train_fraction = 0.8;
  s.run_probe = true;
  return s;
}

const MethodResult& RegressionOutcome::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.method == name) return m;
  }
  throw Error(ErrorCode::invalid_argument, "no method named '" + name + "'");
}

RegressionOutcome run_regression_setting(const RegressionSetting& setting, std::uint64_t seed) {
  const auto [ds, truth] = generate(setting.gen, seed);
  const auto [train, test] = split(ds, setting.train_fraction, seed, true);
  const Standardizer baseline = Standardizer::fit(train);
  SamplerConfig sampler = setting.sampler;
  sampler.seed = seed;
  std::optional<SiteProbeOptions> probe;
  if (setting.run_probe) {
    probe = setting.probe;
    probe->seed = seed;
  }

  RegressionOutcome out;
  out.seed = seed;
  for (Strategy strategy : {Strategy::hbr, Strategy::no_pooling, Strategy::pooling}) {
    ModelSpec spec;
    spec.strategy = strategy;
    const auto model = fit(spec, train, fit_options(sampler, setting.jobs));
    out.methods.push_back(score(strategy_name(strategy), predict(model, test.covariates, test.batch_labels), test,
                                baseline, probe));
  }
  const CombatModel harmonizer = combat_fit(train, train.covariate_names);
  const Dataset train_h = combat_apply(harmonizer, train);
  const Dataset test_h = combat_apply(harmonizer, test);
  ModelSpec pooled;
  pooled.strategy = Strategy::pooling;
  const auto model = fit(pooled, train_h, fit_options(sampler, setting.jobs));
  const Prediction pred_h = predict(model, test_h.covariates, test_h.batch_labels);
  out.methods.push_back(score("combat+pooling", combat_unharmonize(harmonizer, test, pred_h), test, baseline, probe));
  return out;
}

AnomalySetting AnomalySetting::defaults() {
  AnomalySetting s;
  s.gen.sites = 11;
  s.gen.site_sizes = {80, 80, 80, 80, 80, 80, 80, 80, 70, 70, 70};
  s.gen.units = 30;
  s.gen.intercept_sd = 0.3;
  s.gen.slope_sd = 0.003;
  s.gen.noise_log_sd = 0.3;
  s.gen.patients_per_site = 14;
  s.gen.patient_units = {4, 13, 22};
  s.gen.patient_effect = 1.5;
  s.reference_sites = 8;
  s.reference_sampler.chains = 4;
  s.reference_sampler.warmup = 1000;
  s.reference_sampler.draws = 1000;
  s.recalibration_sampler.chains = 2;
  s.recalibration_sampler.warmup = 500;
  s.recalibration_sampler.draws = 500;
  return s;
}

AnomalyOutcome run_anomaly_setting(const AnomalySetting& setting, std::uint64_t seed) {
  if (setting.reference_sites < 2 || setting.reference_sites >= setting.gen.sites) {
    throw Error(ErrorCode::invalid_argument, "reference sites must leave at least one new site");
  }
  const auto [ds, truth] = generate(setting.gen, seed);
  // Sites are named in order, so the first reference_sites labels are the reference.
  const BatchIndex batches(ds.batch_labels);
  std::vector<std::string> reference_labels;
  for (const auto& l : batches.labels()) {
    if (reference_labels.size() < setting.reference_sites) reference_labels.push_back(l);
  }
  auto is_reference = [&](const std::string& label) {
    return std::find(reference_labels.begin(), reference_labels.end(), label) != reference_labels.end();
  };
  std::vector<std::size_t> ref_rows, new_healthy_rows, patient_rows;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    if (is_reference(ds.batch_labels[i])) {
      if (ds.is_healthy(i)) ref_rows.push_back(i);
    } else if (ds.is_healthy(i)) {
      new_healthy_rows.push_back(i);
    } else {
      patient_rows.push_back(i);
    }
  }
  const Dataset reference = ds.subset(ref_rows);
  const Dataset new_healthy = ds.subset(new_healthy_rows);
  const Dataset patients = ds.subset(patient_rows);

  ModelSpec spec;
  spec.strategy = Strategy::hbr;
  SamplerConfig ref_sampler = setting.reference_sampler;
  ref_sampler.seed = seed;
  const FittedNormativeModel ref_model = fit(spec, reference, fit_options(ref_sampler, setting.jobs));
  const HyperpriorPack pack = distill(ref_model);

  AnomalyOutcome out;
  out.seed = seed;
  out.planted_units = setting.gen.patient_units;
  std::vector<GroupedDeviations> reps;
  for (std::size_t rep = 0; rep < setting.repetitions; ++rep) {
    const std::uint64_t rep_seed = seed * 1000 + rep;
    const auto [recal_data, held_out] = split(new_healthy, setting.recalibration_fraction, rep_seed, true);
    SamplerConfig sampler = setting.recalibration_sampler;
    sampler.seed = rep_seed;
    const FittedNormativeModel recal = recalibrate(pack, recal_data, spec, fit_options(sampler, setting.jobs));

    ModelSpec pooled;
    pooled.strategy = Strategy::pooling;
    const Dataset pooled_train = concat(reference, recal_data);
    const FittedNormativeModel pool_model = fit(pooled, pooled_train, fit_options(sampler, setting.jobs));

    const Standardizer baseline = Standardizer::fit(recal_data);
    std::map<std::string, MetricReport> metrics;
    const Prediction hbr_pred = predict(recal, held_out.covariates, held_out.batch_labels);
    metrics["hbr"] = regression_metrics(hbr_pred.mean, hbr_pred.sd, held_out.responses, baseline);
    const Prediction pool_pred = predict(pool_model, held_out.covariates, held_out.batch_labels);
    metrics["pooling"] = regression_metrics(pool_pred.mean, pool_pred.sd, held_out.responses, baseline);
    const Prediction prior_pred = predict_priors_only(pack, held_out.covariates);
    metrics["priors-only"] = regression_metrics(prior_pred.mean, prior_pred.sd, held_out.responses, baseline);
    out.regression.push_back(std::move(metrics));

    const Dataset scored = concat(held_out, patients);
    const DeviationReport dev = deviations(recal, scored);
    reps.push_back(GroupedDeviations{dev.z, scored.groups});
  }
  AnomalyOptions options = setting.anomaly;
  options.seed = seed;
  out.report = anomaly_auc(reps, ds.response_names, options);
  return out;
}

MetricReport concat_metrics(const std::vector<MetricReport>& reports) {
  MetricReport out;
  Eigen::Index total = 0;
  for (const auto& r : reports) total += r.smse.size();
  out.smse.resize(total);
  out.msll.resize(total);
  Eigen::Index k = 0;
  for (const auto& r : reports) {
    out.smse.segment(k, r.smse.size()) = r.smse;
    out.msll.segment(k, r.msll.size()) = r.msll;
    out.rho.insert(out.rho.end(), r.rho.begin(), r.rho.end());
    k += r.smse.size();
  }
  return out;
}

}  // namespace hbrnorm
