// Acceptance suite. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hbrnorm/archive.hpp"
#include "hbrnorm/combat.hpp"
#include "hbrnorm/evaluation.hpp"
#include "hbrnorm/experiments.hpp"
#include "hbrnorm/models.hpp"
#include "hbrnorm/nuts.hpp"
#include "hbrnorm/parallel.hpp"
#include "hbrnorm/synthgen.hpp"
#include "hbrnorm/transfer.hpp"
#include "oracles.hpp"

using namespace hbrnorm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::size_t jobs() { return default_jobs(); }

// ---------------------------------------------------------------------------

Outcome sampler_correctness() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(1.5, 2.0);
  std::vector<double> y(50);
  for (auto& v : y) v = nd(rng);
  oracle::ConjugateNormalMean d(y, 2.0, 0.0, 3.0);
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.seed = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const PosteriorDraws draws = sample_nuts(d, cfg);
  const DiagnosticsReport rep = diagnostics(draws);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const Eigen::VectorXd x = draws.parameter(0);
  const double ess = rep.ess_bulk[0];
  const double mean = x.mean();
  const double var = std::pow(oracle::sd(x), 2);
  const double target_var = d.posterior_variance();
  const double mean_se = std::sqrt(target_var / ess);
  // normal draws: Var(s^2) = 2 sigma^4 / (n - 1)
  const double var_se = target_var * std::sqrt(2.0 / ess);
  const bool ok = std::abs(mean - d.posterior_mean()) < 3 * mean_se && std::abs(var - target_var) < 3 * var_se &&
                  rep.max_rhat < 1.01 && secs < 10.0;
  return {ok, "mean " + fmt(mean) + " vs " + fmt(d.posterior_mean()) + " (se " + fmt(mean_se) + "), var " + fmt(var) +
                  " vs " + fmt(target_var) + " (se " + fmt(var_se) + "), rhat " + fmt(rep.max_rhat) + ", " +
                  fmt(secs, 2) + " s"};
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  GenConfig cfg;
  cfg.sites = 5;
  cfg.site_sizes = {30};
  cfg.hetero_quadratic = 0.5;
  const Dataset ds = generate(cfg, 1).first;
  double worst = 0.0;
  std::size_t evaluated = 0;
  struct Variant {
    Strategy s;
    NoiseForm n;
  };
  const std::vector<Variant> variants{{Strategy::pooling, NoiseForm::homoscedastic()},
                                      {Strategy::no_pooling, NoiseForm::homoscedastic()},
                                      {Strategy::hbr, NoiseForm::homoscedastic()},
                                      {Strategy::hbr, NoiseForm::hetero(2)},
                                      {Strategy::pooling, NoiseForm::hetero(2)},
                                      {Strategy::no_pooling, NoiseForm::hetero(2)}};
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (const auto& v : variants) {
    ModelSpec spec;
    spec.strategy = v.s;
    spec.noise = v.n;
    auto d = build_density(spec, ds, 0);
    for (int k = 0; k < 20; ++k) {
      Eigen::VectorXd u(static_cast<Eigen::Index>(d->dim()));
      for (auto& e : u) e = nd(rng);
      const LogpGrad lg = logp_and_grad(*d, {u.data(), d->dim()});
      worst = std::max(worst, oracle::max_relative_error(lg.grad, oracle::fd_gradient(*d, u)));
      ++evaluated;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-5 && secs < 5.0,
          std::to_string(evaluated) + " points, max relative error " + std::to_string(worst) + ", " + fmt(secs, 2) + " s"};
}

// ---------------------------------------------------------------------------

Outcome parameter_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  GenConfig cfg;
  cfg.sites = 10;
  cfg.site_sizes = {100};
  std::size_t good = 0;
  std::ostringstream misses;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Dataset ds = generate(cfg, seed).first;
    FitOptions o;
    o.sampler.seed = seed;
    const FittedNormativeModel m = fit(ModelSpec{}, ds, o);
    const Eigen::VectorXd b0 = block_draws(m, 0, "mu_theta_mu", 0);
    const Eigen::VectorXd b1 = block_draws(m, 0, "mu_theta_mu", 1);
    Eigen::VectorXd a(b0.size()), s(b0.size());
    for (Eigen::Index k = 0; k < b0.size(); ++k) {
      Eigen::VectorXd beta(2);
      beta << b0(k), b1(k);
      const Eigen::VectorXd raw = raw_linear_coefficients(m.standardizer, 0, beta);
      a(k) = raw(0);
      s(k) = raw(1);
    }
    const Eigen::VectorXd noise = block_draws(m, 0, "mu_theta_sigma", 0) * m.standardizer.response_sd(0);
    const double za = (a.mean() - cfg.intercept_mean) / oracle::sd(a);
    const double zs = (s.mean() - cfg.slope_mean) / oracle::sd(s);
    const double zn = (noise.mean() - std::exp(cfg.noise_log_mean)) / oracle::sd(noise);
    if (std::abs(za) < 3 && std::abs(zs) < 3 && std::abs(zn) < 3) {
      ++good;
    } else {
      misses << " seed " << seed << " (z " << fmt(za, 2) << "/" << fmt(zs, 2) << "/" << fmt(zn, 2) << ")";
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {good >= 9 && secs < 300.0,
          std::to_string(good) + "/10 seeds within 3 sd" + misses.str() + ", " + fmt(secs, 1) + " s"};
}

// ---------------------------------------------------------------------------

Outcome z_calibration() {
  GenConfig cfg;
  cfg.sites = 10;
  cfg.site_sizes = {300};
  const Dataset ds = generate(cfg, 1).first;
  const auto [train, test] = split(ds, 1.0 / 3.0, 1, true);
  FitOptions o;
  o.sampler.seed = 1;
  const FittedNormativeModel m = fit(ModelSpec{}, train, o);
  const DeviationReport d = deviations(m, test);
  const Eigen::VectorXd z = d.z.col(0);
  const double mean = z.mean();
  const double sd = oracle::sd(z);
  const double cover = static_cast<double>((z.array().abs() <= 1.959963984540054).count()) / static_cast<double>(z.size());
  const bool ok = z.size() == 2000 && std::abs(mean) < 0.05 && sd >= 0.95 && sd <= 1.05 && cover >= 0.93 && cover <= 0.97;
  return {ok, "n " + std::to_string(z.size()) + ", mean " + fmt(mean) + ", sd " + fmt(sd) + ", 95% coverage " +
                  fmt(100 * cover, 2) + "%"};
}

// ---------------------------------------------------------------------------

Outcome method_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  RegressionSetting setting = RegressionSetting::defaults();
  setting.jobs = jobs();
  std::size_t good = 0;
  std::ostringstream rows;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const RegressionOutcome o = run_regression_setting(setting, seed);
    const double hbr = o.method("hbr").metrics.median_msll();
    const double nopool = o.method("nopool").metrics.median_msll();
    const double pooling = o.method("pooling").metrics.median_msll();
    const double combat = o.method("combat+pooling").metrics.median_msll();
    const bool ok = hbr <= nopool && nopool < pooling && hbr < combat;
    good += ok;
    rows << "\n    seed " << seed << ": hbr " << fmt(hbr) << "  nopool " << fmt(nopool) << "  pooling " << fmt(pooling)
         << "  combat+pooling " << fmt(combat) << (ok ? "" : "  <- violated");
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {good >= 8 && secs < 900.0, std::to_string(good) + "/10 seeds ordered, " + fmt(secs, 1) + " s" + rows.str()};
}

// ---------------------------------------------------------------------------

Outcome site_probe_check() {
  RegressionSetting setting = RegressionSetting::balanced();
  setting.jobs = jobs();
  const RegressionOutcome o = run_regression_setting(setting, 1);
  bool ok = true;
  std::ostringstream rows;
  for (const auto& m : o.methods) {
    const SiteProbeResult& p = *m.probe;
    const bool at_chance = std::abs(p.balanced_accuracy - p.chance) <= 2 * p.chance_se;
    const bool expected = m.method == "pooling" ? p.p_value < 0.01 : at_chance;
    ok = ok && expected;
    rows << "\n    " << m.method << ": balanced accuracy " << fmt(p.balanced_accuracy) << " (chance " << fmt(p.chance, 3)
         << ", 2 SE " << fmt(2 * p.chance_se) << ", p " << p.p_value << ")" << (expected ? "" : "  <- violated");
  }
  return {ok, std::to_string(o.methods.front().probe->classes) + " sites" + rows.str()};
}

// ---------------------------------------------------------------------------

Dataset concat(const Dataset& a, const Dataset& b) {
  std::vector<std::size_t> rows;
  Dataset out = a;
  out.covariates.conservativeResize(a.covariates.rows() + b.covariates.rows(), Eigen::NoChange);
  out.covariates.bottomRows(b.covariates.rows()) = b.covariates;
  out.responses.conservativeResize(a.responses.rows() + b.responses.rows(), Eigen::NoChange);
  out.responses.bottomRows(b.responses.rows()) = b.responses;
  out.batch_labels.insert(out.batch_labels.end(), b.batch_labels.begin(), b.batch_labels.end());
  out.subject_ids.insert(out.subject_ids.end(), b.subject_ids.begin(), b.subject_ids.end());
  out.groups.insert(out.groups.end(), b.groups.begin(), b.groups.end());
  return out;
}

struct TransferFixture {
  Dataset reference, new_train, new_test;
  FittedNormativeModel reference_model;
};

TransferFixture transfer_fixture() {
  GenConfig cfg;
  cfg.sites = 10;
  cfg.site_sizes = {80, 80, 80, 80, 80, 80, 80, 80, 250, 250};
  cfg.units = 3;
  const Dataset all = generate(cfg, 1).first;
  std::vector<std::size_t> ref, fresh;
  for (std::size_t i = 0; i < all.rows(); ++i) (all.batch_labels[i] <= "site08" ? ref : fresh).push_back(i);
  TransferFixture f;
  f.reference = all.subset(ref);
  // 50 rows per new site to recalibrate on, the rest held out
  std::tie(f.new_train, f.new_test) = split(all.subset(fresh), 0.2, 1, true);
  FitOptions o;
  o.sampler.seed = 1;
  o.jobs = jobs();
  f.reference_model = fit(ModelSpec{}, f.reference, o);
  return f;
}

Outcome transfer_check(const TransferFixture& f) {
  FitOptions o;
  o.sampler.seed = 2;
  o.jobs = jobs();
  const HyperpriorPack pack = distill(f.reference_model);
  const FittedNormativeModel recal = recalibrate(pack, f.new_train, ModelSpec{}, o);
  const FittedNormativeModel joint = fit(ModelSpec{}, concat(f.reference, f.new_train), o);

  const Standardizer baseline = Standardizer::fit(f.new_train);
  const auto& t = f.new_test;
  const Prediction pr = predict(recal, t.covariates, t.batch_labels);
  const Prediction pj = predict(joint, t.covariates, t.batch_labels);
  const Prediction pp = predict_priors_only(pack, t.covariates);
  const double m_recal = regression_metrics(pr.mean, pr.sd, t.responses, baseline).median_msll();
  const double m_joint = regression_metrics(pj.mean, pj.sd, t.responses, baseline).median_msll();
  const double m_prior = regression_metrics(pp.mean, pp.sd, t.responses, baseline).median_msll();
  const bool ok = std::abs(m_recal - m_joint) <= 0.1 && m_recal < m_prior;
  return {ok, "median MSLL recalibrated " + fmt(m_recal) + ", joint fit " + fmt(m_joint) + ", priors-only " +
                  fmt(m_prior) + " (" + std::to_string(t.rows()) + " held-out rows, 2 new sites)"};
}

// ---------------------------------------------------------------------------

Dataset shift_scale(std::uint64_t seed, const std::vector<double>& shift, const std::vector<double>& scale, std::size_t n,
                    double slope) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(8.0, 97.0);
  Dataset ds;
  ds.covariate_names = {"age"};
  ds.response_names = {"roi"};
  ds.batch_dimensions = {"site"};
  const std::size_t m = shift.size();
  ds.covariates.resize(static_cast<Eigen::Index>(m * n), 1);
  ds.responses.resize(static_cast<Eigen::Index>(m * n), 1);
  for (std::size_t b = 0; b < m; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(b * n + i);
      ds.covariates(r, 0) = ud(rng);
      ds.responses(r, 0) = 1.0 + slope * ds.covariates(r, 0) + shift[b] + scale[b] * 0.5 * nd(rng);
      ds.batch_labels.push_back((b < 10 ? "b0" : "b") + std::to_string(b));
      ds.subject_ids.push_back(std::to_string(r));
      ds.groups.push_back(healthy_group);
    }
  }
  return ds;
}

Eigen::VectorXd ols_fit(const Dataset& ds) {
  Eigen::MatrixXd x(ds.rows(), 2);
  x.col(0).setOnes();
  x.col(1) = ds.covariates.col(0);
  return oracle::ols(x, ds.responses.col(0));
}

Outcome combat_check() {
  // two batches, batch 2 shifted by 1.0 with residuals scaled by 2
  const Dataset ds = shift_scale(1, {0.0, 1.0}, {1.0, 2.0}, 500, 0.3);
  const Dataset h = combat_apply(combat_fit(ds, {"age"}), ds);
  const Eigen::VectorXd beta = ols_fit(h);
  Eigen::MatrixXd x(h.rows(), 2);
  x.col(0).setOnes();
  x.col(1) = h.covariates.col(0);
  const Eigen::VectorXd r = h.responses.col(0) - x * beta;
  const Eigen::VectorXd r1 = r.head(500), r2 = r.tail(500);
  const double mean_gap = std::abs(r1.mean() - r2.mean());
  const double sd_ratio = oracle::sd(r2) / oracle::sd(r1);

  // covariate-linked signal: slope 2 with batch shifts independent of age
  const Dataset s = shift_scale(2, {0.0, 1.0, -0.5}, {1.0, 2.0, 0.7}, 300, 2.0);
  const double slope = ols_fit(combat_apply(combat_fit(s, {"age"}), s))(1);

  double mse_eb = 0.0, mse_ls = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    std::normal_distribution<double> g(0.0, 0.2);
    std::vector<double> shift(30), scale(30, 1.0);
    for (auto& v : shift) v = g(rng);
    const CombatModel m = combat_fit(shift_scale(seed, shift, scale, 8, 0.3), {"age"});
    Eigen::VectorXd truth = Eigen::Map<Eigen::VectorXd>(shift.data(), 30);
    truth.array() -= truth.mean();
    Eigen::VectorXd eb = m.additive_effects().col(0);
    Eigen::VectorXd ls = m.gamma_hat.col(0) * m.sigma(0);
    eb.array() -= eb.mean();
    ls.array() -= ls.mean();
    mse_eb += (eb - truth).squaredNorm() / 10;
    mse_ls += (ls - truth).squaredNorm() / 10;
  }
  const bool ok = mean_gap < 0.05 && std::abs(sd_ratio - 1.0) < 0.05 && std::abs(slope - 2.0) < 0.1 && mse_eb < mse_ls;
  return {ok, "residual mean gap " + fmt(mean_gap) + ", sd ratio " + fmt(sd_ratio) + ", slope " + fmt(slope) +
                  ", shrinkage MSE " + fmt(mse_eb, 5) + " vs least squares " + fmt(mse_ls, 5)};
}

// ---------------------------------------------------------------------------

Outcome anomaly_check() {
  const auto t0 = std::chrono::steady_clock::now();
  AnomalySetting setting = AnomalySetting::defaults();
  setting.jobs = jobs();
  std::size_t exact = 0;
  std::ostringstream rows;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const AnomalyOutcome o = run_anomaly_setting(setting, seed);
    const auto stable = o.report.stable_units(setting.gen.diagnosis);
    const bool ok = stable == o.planted_units;
    exact += ok;
    rows << "\n    seed " << seed << ": stable";
    for (auto u : stable) rows << " " << o.report.unit_names[u];
    if (!ok) rows << "  <- planted are units " << o.planted_units[0] << "," << o.planted_units[1] << ","
                  << o.planted_units[2] << " (0-based)";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {exact >= 9, std::to_string(exact) + "/10 seeds with exactly the planted units stable, " + fmt(secs, 1) + " s" +
                          rows.str()};
}

// ---------------------------------------------------------------------------

double hetero_gap(double quadratic, std::uint64_t seed) {
  GenConfig cfg;
  cfg.sites = 6;
  cfg.site_sizes = {160};
  cfg.units = 2;
  cfg.hetero_quadratic = quadratic;
  const Dataset ds = generate(cfg, seed).first;
  const auto [train, test] = split(ds, 0.5, seed, true);
  const Standardizer baseline = Standardizer::fit(train);
  FitOptions o;
  o.sampler.seed = seed;
  o.jobs = jobs();
  ModelSpec homo, hetero;
  hetero.noise = NoiseForm::hetero(2);
  const auto mh = fit(homo, train, o);
  const auto mt = fit(hetero, train, o);
  const Prediction ph = predict(mh, test.covariates, test.batch_labels);
  const Prediction pt = predict(mt, test.covariates, test.batch_labels);
  return regression_metrics(pt.mean, pt.sd, test.responses, baseline).median_msll() -
         regression_metrics(ph.mean, ph.sd, test.responses, baseline).median_msll();
}

Outcome heteroscedastic_check() {
  const double quad = hetero_gap(2.0, 1);
  const double flat = hetero_gap(0.0, 1);
  return {quad < 0.0 && std::abs(flat) < 0.05, "MSLL hetero minus homo: quadratic-variance data " + fmt(quad) +
                                                    ", homoscedastic data " + fmt(flat)};
}

// ---------------------------------------------------------------------------

bool same_prediction(const Prediction& a, const Prediction& b) { return a.mean == b.mean && a.sd == b.sd; }

Outcome persistence_check(const TransferFixture& f) {
  const auto dir = std::filesystem::temp_directory_path() / "hbrnorm_acceptance";
  std::filesystem::create_directories(dir);
  const auto& t = f.new_test;
  bool ok = true;
  std::ostringstream notes;

  // save -> load -> predict, every strategy
  FitOptions o;
  o.sampler.seed = 3;
  o.sampler.warmup = 300;
  o.sampler.draws = 300;
  o.jobs = jobs();
  for (Strategy s : {Strategy::pooling, Strategy::no_pooling, Strategy::hbr}) {
    ModelSpec spec;
    spec.strategy = s;
    const auto m = fit(spec, f.reference, o);
    const std::string path = (dir / (strategy_name(s) + ".model")).string();
    save_model(path, m);
    const auto back = load_model(path);
    const bool same = same_prediction(predict(m, f.reference.covariates, f.reference.batch_labels),
                                      predict(back, f.reference.covariates, f.reference.batch_labels));
    ok = ok && same;
    notes << strategy_name(s) << (same ? " identical" : " DIFFERS") << "; ";
  }
  const CombatModel cm = combat_fit(f.reference, {"age"});
  save_combat((dir / "h.combat").string(), cm);
  const bool combat_same = combat_apply(load_combat((dir / "h.combat").string()), f.reference).responses ==
                           combat_apply(cm, f.reference).responses;
  ok = ok && combat_same;
  notes << "combat " << (combat_same ? "identical" : "DIFFERS") << "; ";

  // privacy contract: recalibration sees only the pack
  FitOptions ro;
  ro.sampler.seed = 4;
  ro.sampler.warmup = 300;
  ro.sampler.draws = 300;
  ro.jobs = jobs();
  const HyperpriorPack pack = distill(f.reference_model);
  const std::string pack_path = (dir / "reference.pack").string();
  save_pack(pack_path, pack);
  const Prediction base = predict(recalibrate(pack, f.new_train, ModelSpec{}, ro), t.covariates, t.batch_labels);

  // (a) a fresh process-level view: only the pack file, no reference objects
  const Prediction from_file =
      predict(recalibrate(load_pack(pack_path), f.new_train, ModelSpec{}, ro), t.covariates, t.batch_labels);
  // (b) reference draws reshuffled: chains reversed and swapped, same moments
  FittedNormativeModel mutated = f.reference_model;
  for (auto& u : mutated.units) {
    const std::size_t dim = u.draws.dim();
    const std::size_t total = u.draws.total();
    std::vector<double> v(u.draws.values.size());
    for (std::size_t k = 0; k < total; ++k) {
      std::copy_n(u.draws.values.begin() + static_cast<std::ptrdiff_t>((total - 1 - k) * dim), dim,
                  v.begin() + static_cast<std::ptrdiff_t>(k * dim));
    }
    u.draws.values = std::move(v);
  }
  const HyperpriorPack mutated_pack = distill(mutated);
  const bool pack_same = mutated_pack.hyperpriors == pack.hyperpriors &&
                         mutated_pack.mu_theta_mu_mean == pack.mu_theta_mu_mean &&
                         mutated_pack.mu_theta_sigma_mean == pack.mu_theta_sigma_mean;
  const Prediction from_mutated =
      predict(recalibrate(mutated_pack, f.new_train, ModelSpec{}, ro), t.covariates, t.batch_labels);
  const bool privacy = same_prediction(base, from_file) && pack_same && same_prediction(base, from_mutated);
  ok = ok && privacy;
  notes << "pack-only recalibration " << (privacy ? "independent of reference data and draw order" : "DIFFERS");
  return {ok, notes.str()};
}

}  // namespace

int main(int argc, char** argv) {
  // optional arguments select criteria by id, e.g. "acceptance AC9"
  const std::vector<std::string> only(argv + 1, argv + argc);
  std::cout << "hbrnorm acceptance suite (jobs " << jobs() << ")\n" << std::flush;
  int failures = 0;
  auto report = [&](const std::string& id, const std::string& name, const std::function<Outcome()>& run) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << name << " [" << fmt(secs, 1) << " s]: " << o.detail << "\n"
              << std::flush;
  };

  report("AC1", "sampler correctness", sampler_correctness);
  report("AC2", "gradient suite", gradient_suite);
  report("AC3", "parameter recovery", parameter_recovery);
  report("AC4", "z-score calibration", z_calibration);
  report("AC5", "method ordering", method_ordering);
  report("AC6", "site probe", site_probe_check);
  std::optional<TransferFixture> fixture;
  auto with_fixture = [&](auto check) {
    return [&, check]() {
      if (!fixture) fixture = transfer_fixture();
      return check(*fixture);
    };
  };
  report("AC7", "transfer", with_fixture(transfer_check));
  report("AC8", "combat", combat_check);
  report("AC9", "anomaly detection", anomaly_check);
  report("AC10", "heteroscedastic option", heteroscedastic_check);
  report("AC11", "persistence and privacy", with_fixture(persistence_check));
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures;
}
