#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hbrnorm/archive.hpp"
#include "hbrnorm/combat.hpp"
#include "hbrnorm/data.hpp"
#include "hbrnorm/error.hpp"
#include "hbrnorm/evaluation.hpp"
#include "hbrnorm/experiments.hpp"
#include "hbrnorm/models.hpp"
#include "hbrnorm/parallel.hpp"
#include "hbrnorm/synthgen.hpp"
#include "hbrnorm/transfer.hpp"

using namespace hbrnorm;
using nlohmann::json;

namespace {

struct SamplerFlags {
  std::size_t chains = 2;
  std::size_t warmup = 1000;
  std::size_t draws = 1000;
  std::uint64_t seed = 0;
  double target_accept = 0.8;

  void add(CLI::App* cmd) {
    cmd->add_option("--chains", chains, "Chains per unit")->capture_default_str();
    cmd->add_option("--warmup", warmup, "Warmup iterations per chain")->capture_default_str();
    cmd->add_option("--draws", draws, "Kept draws per chain")->capture_default_str();
    cmd->add_option("--seed", seed, "Sampler seed")->capture_default_str();
    cmd->add_option("--target-accept", target_accept)->capture_default_str();
  }
  SamplerConfig config() const {
    SamplerConfig c;
    c.chains = chains;
    c.warmup = warmup;
    c.draws = draws;
    c.seed = seed;
    c.target_accept = target_accept;
    return c;
  }
};

bool has_column(const std::string& csv, const std::string& name) {
  std::ifstream in(csv);
  if (!in) throw Error(ErrorCode::io, "cannot open CSV file '" + csv + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  for (const auto& c : split_list(line)) {
    if (c == name) return true;
  }
  return false;
}

std::string sidecar_schema(const std::string& csv) { return csv + ".schema"; }

// Explicit --schema, else the sidecar written by simulate/harmonize.
CsvSchema resolve_schema(const std::string& data, const std::string& schema) {
  if (!schema.empty()) return CsvSchema::load(schema);
  if (std::filesystem::exists(sidecar_schema(data))) return CsvSchema::load(sidecar_schema(data));
  throw Error(ErrorCode::usage, "no --schema given and no '" + sidecar_schema(data) + "' next to the data");
}

// Columns named by the model; group column used when present.
CsvSchema schema_for_model(const std::string& data, const std::string& schema,
                           const std::vector<std::string>& covariates, const std::vector<std::string>& units,
                           const std::vector<std::string>& batch_dimensions) {
  if (!schema.empty()) return CsvSchema::load(schema);
  CsvSchema s;
  if (std::filesystem::exists(sidecar_schema(data))) s.id_column = CsvSchema::load(sidecar_schema(data)).id_column;
  s.covariates = covariates;
  s.responses = units;
  s.batches = batch_dimensions;
  if (has_column(data, "group")) s.group_column = "group";
  return s;
}

Dataset load_for_model(const std::string& data, const std::string& schema, const FittedNormativeModel& m) {
  return ingest_csv(data, schema_for_model(data, schema, m.covariate_names, m.response_names(), m.batch_dimensions));
}

void write_schema(const std::string& path, const CsvSchema& s) {
  std::ostringstream out;
  for (const auto& [k, v] : s.to_key_values()) out << k << " = " << v << "\n";
  write_file_atomic(path, out.str());
}

// subject_id, batch dimensions, group, then extra per-unit columns.
CsvTable row_table(const Dataset& ds, const std::vector<std::pair<std::string, const Eigen::MatrixXd*>>& blocks) {
  CsvTable t;
  t.header.push_back("subject_id");
  for (const auto& b : ds.batch_dimensions) t.header.push_back(b);
  t.header.push_back("group");
  for (const auto& [suffix, m] : blocks) {
    (void)m;
    for (const auto& u : ds.response_names) t.header.push_back(u + "_" + suffix);
  }
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    std::vector<std::string> row{ds.subject_ids[i]};
    auto parts = split_batch_label(ds.batch_labels[i]);
    parts.resize(ds.batch_dimensions.size());
    row.insert(row.end(), parts.begin(), parts.end());
    row.push_back(ds.groups[i]);
    for (const auto& [suffix, m] : blocks) {
      (void)suffix;
      for (Eigen::Index j = 0; j < m->cols(); ++j) row.push_back(format_double((*m)(static_cast<Eigen::Index>(i), j)));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void print_diagnostics(const FittedNormativeModel& m) {
  std::cout << "unit,max_rhat,min_ess_bulk,divergences,status\n";
  for (const auto& u : m.units) {
    const auto& d = u.diagnostics;
    std::cout << u.name << "," << format_double(d.max_rhat) << "," << format_double(d.min_ess) << ","
              << d.divergences << "," << (d.clean() ? "ok" : "warn") << "\n";
  }
}

json metric_json(const MetricReport& r) {
  json j;
  j["median_rho"] = r.median_rho();
  j["median_smse"] = r.median_smse();
  j["median_msll"] = r.median_msll();
  return j;
}

CsvTable metric_table(const std::vector<std::string>& units, const MetricReport& r) {
  CsvTable t;
  t.header = {"unit", "rho", "smse", "msll"};
  for (std::size_t j = 0; j < units.size(); ++j) {
    const auto k = static_cast<Eigen::Index>(j);
    t.rows.push_back({units[j], r.rho[j] ? format_double(*r.rho[j]) : "", format_double(r.smse(k)),
                      format_double(r.msll(k))});
  }
  t.rows.push_back({"median", format_double(r.median_rho()), format_double(r.median_smse()),
                    format_double(r.median_msll())});
  return t;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void anomaly_table(const AnomalyReport& report, const std::string& path) {
  CsvTable t;
  t.header = {"diagnosis", "unit", "mean_auc", "max_p", "significant", "stable", "direction"};
  for (const auto& [dx, units] : report.diagnoses) {
    for (std::size_t j = 0; j < units.size(); ++j) {
      const auto& u = units[j];
      double auc_sum = 0.0, p_max = 0.0;
      for (double a : u.auc) auc_sum += a;
      for (double p : u.p) p_max = std::max(p_max, p);
      t.rows.push_back({dx, report.unit_names[j], format_double(auc_sum / static_cast<double>(u.auc.size())),
                        format_double(p_max), std::to_string(u.significant), u.stable ? "1" : "0",
                        std::to_string(u.direction)});
    }
  }
  if (path.empty()) {
    for (const auto& h : t.header) std::cout << h << (&h == &t.header.back() ? "\n" : ",");
    for (const auto& r : t.rows) {
      for (std::size_t k = 0; k < r.size(); ++k) std::cout << r[k] << (k + 1 == r.size() ? "\n" : ",");
    }
  } else {
    write_csv(path, t);
  }
}

int repro_regression(std::uint64_t seed, std::size_t jobs, bool probe, const std::string& out_dir) {
  RegressionSetting setting = RegressionSetting::defaults();
  setting.jobs = jobs;
  const RegressionOutcome o = run_regression_setting(setting, seed);
  std::cout << "setting regression seed " << seed << "\n";
  std::cout << "method            median_rho  median_smse  median_msll\n";
  for (const auto& m : o.methods) {
    std::cout << std::left << std::setw(18) << m.method << std::right << std::setw(10) << fixed(m.metrics.median_rho())
              << std::setw(13) << fixed(m.metrics.median_smse()) << std::setw(13) << fixed(m.metrics.median_msll())
              << "\n";
  }
  const double hbr = o.method("hbr").metrics.median_msll();
  const double nopool = o.method("nopool").metrics.median_msll();
  const double pooling = o.method("pooling").metrics.median_msll();
  const double combat = o.method("combat+pooling").metrics.median_msll();
  const bool ordered = hbr <= nopool && nopool < pooling && hbr < combat;
  std::cout << "ordering hbr <= nopool < pooling, hbr < combat+pooling: " << (ordered ? "holds" : "violated") << "\n";

  std::optional<RegressionOutcome> p;
  if (probe) {
    RegressionSetting balanced = RegressionSetting::balanced();
    balanced.jobs = jobs;
    p = run_regression_setting(balanced, seed);
    std::cout << "site probe (balanced sites)\n";
    std::cout << "method            balanced_acc  chance  chance_se  p_value\n";
    for (const auto& m : p->methods) {
      std::cout << std::left << std::setw(18) << m.method << std::right << std::setw(12)
                << fixed(m.probe->balanced_accuracy) << std::setw(8) << fixed(m.probe->chance, 3) << std::setw(11)
                << fixed(m.probe->chance_se) << "  " << format_double(m.probe->p_value) << "\n";
    }
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    CsvTable t;
    t.header = {"method", "unit", "rho", "smse", "msll"};
    for (const auto& m : o.methods) {
      for (std::size_t j = 0; j < m.metrics.rho.size(); ++j) {
        const auto k = static_cast<Eigen::Index>(j);
        t.rows.push_back({m.method, std::to_string(j), m.metrics.rho[j] ? format_double(*m.metrics.rho[j]) : "",
                          format_double(m.metrics.smse(k)), format_double(m.metrics.msll(k))});
      }
    }
    write_csv(out_dir + "/regression_metrics.csv", t);
    if (p) {
      CsvTable s;
      s.header = {"method", "balanced_accuracy", "chance", "chance_se", "p_value", "rows", "classes"};
      for (const auto& m : p->methods) {
        s.rows.push_back({m.method, format_double(m.probe->balanced_accuracy), format_double(m.probe->chance),
                          format_double(m.probe->chance_se), format_double(m.probe->p_value),
                          std::to_string(m.probe->rows), std::to_string(m.probe->classes)});
      }
      write_csv(out_dir + "/site_probe.csv", s);
    }
  }
  return 0;
}

int repro_anomaly(std::uint64_t seed, std::size_t jobs, const std::string& out_dir) {
  AnomalySetting setting = AnomalySetting::defaults();
  setting.jobs = jobs;
  const AnomalyOutcome o = run_anomaly_setting(setting, seed);
  std::cout << "setting anomaly seed " << seed << "\n";
  std::cout << "method        median_rho  median_smse  median_msll   (held-out healthy rows of new sites)\n";
  for (const std::string name : {"hbr", "pooling", "priors-only"}) {
    std::vector<MetricReport> per_rep;
    for (const auto& r : o.regression) per_rep.push_back(r.at(name));
    const MetricReport m = concat_metrics(per_rep);
    std::cout << std::left << std::setw(12) << name << std::right << std::setw(12) << fixed(m.median_rho())
              << std::setw(13) << fixed(m.median_smse()) << std::setw(13) << fixed(m.median_msll()) << "\n";
  }
  const auto stable = o.report.stable_units(setting.gen.diagnosis);
  std::cout << "stable units:";
  for (auto u : stable) std::cout << " " << o.report.unit_names[u];
  std::cout << "\nplanted units:";
  for (auto u : o.planted_units) std::cout << " " << o.report.unit_names[u];
  std::cout << "\nrecovered exactly: " << (stable == o.planted_units ? "yes" : "no") << "\n";
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    anomaly_table(o.report, out_dir + "/anomaly_auc.csv");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-site normative modeling"};
  app.require_subcommand(1);
  std::size_t jobs = default_jobs();
  app.add_option("--jobs", jobs, "Units fitted concurrently (default: HBRNORM_JOBS or 1)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic multi-site dataset");
  std::string sim_config, sim_out, sim_schema_out;
  std::uint64_t sim_seed = 0;
  sim->add_option("--config", sim_config, "GenConfig key = value file")->required();
  sim->add_option("--seed", sim_seed)->required();
  sim->add_option("--out", sim_out, "Output CSV")->required();
  sim->add_option("--schema-out", sim_schema_out, "Schema file (default: <out>.schema)");

  // fit
  auto* fitc = app.add_subcommand("fit", "Fit a normative model per response unit");
  std::string fit_data, fit_schema, fit_strategy = "hbr", fit_noise = "homo", fit_out;
  std::size_t fit_degree = 1;
  std::optional<double> fit_clamp;
  SamplerFlags fit_sampler;
  fitc->add_option("--data", fit_data)->required();
  fitc->add_option("--schema", fit_schema);
  fitc->add_option("--strategy", fit_strategy)->check(CLI::IsMember({"pooling", "nopool", "hbr"}))->capture_default_str();
  fitc->add_option("--noise", fit_noise, "homo or hetero:<degree>")->capture_default_str();
  fitc->add_option("--mean-degree", fit_degree)->capture_default_str();
  fitc->add_option("--clamp-group-scale", fit_clamp);
  fitc->add_option("--out", fit_out)->required();
  fit_sampler.add(fitc);

  // harmonize
  auto* harm = app.add_subcommand("harmonize", "ComBat harmonization");
  std::string harm_data, harm_schema, harm_design, harm_out, harm_model_out, harm_model;
  harm->add_option("--data", harm_data)->required();
  harm->add_option("--schema", harm_schema);
  harm->add_option("--design", harm_design, "Comma-separated covariates to preserve");
  harm->add_option("--out", harm_out)->required();
  harm->add_option("--model-out", harm_model_out);
  harm->add_option("--model", harm_model, "Apply a saved harmonizer instead of fitting");

  // predict / score
  auto* pred = app.add_subcommand("predict", "Predictive mean and sd per row and unit");
  std::string pred_model, pred_data, pred_schema, pred_out;
  pred->add_option("--model", pred_model)->required();
  pred->add_option("--data", pred_data)->required();
  pred->add_option("--schema", pred_schema);
  pred->add_option("--out", pred_out)->required();

  auto* scorec = app.add_subcommand("score", "Deviation z-scores and two-sided p per row and unit");
  std::string score_model, score_data, score_schema, score_out;
  scorec->add_option("--model", score_model)->required();
  scorec->add_option("--data", score_data)->required();
  scorec->add_option("--schema", score_schema);
  scorec->add_option("--out", score_out)->required();

  // transfer
  auto* dist = app.add_subcommand("distill", "Reduce an hbr model to a hyperprior pack");
  std::string dist_model, dist_out;
  double dist_min_ess = 100.0;
  dist->add_option("--model", dist_model)->required();
  dist->add_option("--out", dist_out)->required();
  dist->add_option("--min-ess", dist_min_ess)->capture_default_str();

  auto* recal = app.add_subcommand("recalibrate", "Fit new sites under a hyperprior pack");
  std::string recal_pack, recal_data, recal_schema, recal_out;
  SamplerFlags recal_sampler;
  recal->add_option("--pack", recal_pack)->required();
  recal->add_option("--data", recal_data)->required();
  recal->add_option("--schema", recal_schema);
  recal->add_option("--out", recal_out)->required();
  recal_sampler.add(recal);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Regression metrics, site probe, anomaly AUC");
  eval->require_subcommand(1);
  std::string ev_model, ev_data, ev_schema, ev_out;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--model", ev_model)->required();
    c->add_option("--data", ev_data)->required();
    c->add_option("--schema", ev_schema);
    c->add_option("--out", ev_out, "CSV table (stdout summary otherwise)");
  };
  auto* ev_reg = eval->add_subcommand("regression", "RHO, SMSE, MSLL against the training baseline");
  add_common(ev_reg);
  auto* ev_sites = eval->add_subcommand("sites", "Classify batch from deviations");
  add_common(ev_sites);
  SiteProbeOptions probe_opts;
  ev_sites->add_option("--folds", probe_opts.folds)->capture_default_str();
  ev_sites->add_option("--seed", probe_opts.seed)->capture_default_str();
  auto* ev_anom = eval->add_subcommand("anomaly", "Patient vs healthy AUC per unit");
  add_common(ev_anom);
  AnomalyOptions anom_opts;
  std::size_t anom_reps = default_anomaly_repetitions;
  bool anom_signed = false;
  ev_anom->add_option("--perms", anom_opts.permutations)->capture_default_str();
  ev_anom->add_option("--alpha", anom_opts.alpha)->capture_default_str();
  ev_anom->add_option("--reps", anom_reps)->capture_default_str();
  ev_anom->add_option("--seed", anom_opts.seed)->capture_default_str();
  ev_anom->add_flag("--signed", anom_signed, "Use signed z instead of |z|");

  // repro
  auto* repro = app.add_subcommand("repro", "Synthetic end-to-end experiments");
  std::string repro_setting;
  std::uint64_t repro_seed = 1;
  std::string repro_out;
  bool repro_probe = false;
  repro->add_option("--setting", repro_setting)->required()->check(CLI::IsMember({"regression", "anomaly"}));
  repro->add_option("--seed", repro_seed)->capture_default_str();
  repro->add_option("--out-dir", repro_out, "Write CSV tables here");
  repro->add_flag("--probe", repro_probe, "Also run the site probe on balanced sites (regression)");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      throw Error(ErrorCode::usage, e.what());
    }
    if (jobs == 0) throw Error(ErrorCode::usage, "--jobs must be positive");

    if (*sim) {
      const GenConfig cfg = GenConfig::load(sim_config);
      const auto [ds, truth] = generate(cfg, sim_seed);
      const CsvSchema schema = default_schema(ds);
      write_dataset_csv(sim_out, ds, schema);
      write_schema(sim_schema_out.empty() ? sidecar_schema(sim_out) : sim_schema_out, schema);
      std::cerr << "seed " << sim_seed << ": " << ds.rows() << " rows, " << ds.num_units() << " units\n";
    } else if (*fitc) {
      const Dataset ds = ingest_csv(fit_data, resolve_schema(fit_data, fit_schema));
      ModelSpec spec;
      spec.strategy = parse_strategy(fit_strategy);
      spec.noise = parse_noise_form(fit_noise);
      spec.mean_degree = fit_degree;
      spec.clamp_group_scale = fit_clamp;
      FitOptions opt;
      opt.sampler = fit_sampler.config();
      opt.jobs = jobs;
      std::cerr << "seed " << opt.sampler.seed << "\n";
      const FittedNormativeModel m = fit(spec, ds, opt);
      print_diagnostics(m);
      save_model(fit_out, m);
    } else if (*harm) {
      const Dataset ds = ingest_csv(harm_data, resolve_schema(harm_data, harm_schema));
      CombatModel model;
      if (!harm_model.empty()) {
        model = load_combat(harm_model);
      } else {
        model = combat_fit(ds, harm_design.empty() ? std::vector<std::string>{} : split_list(harm_design));
      }
      const Dataset out = combat_apply(model, ds);
      const CsvSchema schema = default_schema(out);
      write_dataset_csv(harm_out, out, schema);
      write_schema(sidecar_schema(harm_out), schema);
      if (!harm_model_out.empty()) save_combat(harm_model_out, model);
    } else if (*pred) {
      const FittedNormativeModel m = load_model(pred_model);
      const Dataset ds = load_for_model(pred_data, pred_schema, m);
      const Prediction p = predict(m, ds.covariates, ds.batch_labels);
      write_csv(pred_out, row_table(ds, {{"mean", &p.mean}, {"sd", &p.sd}}));
    } else if (*scorec) {
      const FittedNormativeModel m = load_model(score_model);
      const Dataset ds = load_for_model(score_data, score_schema, m);
      const DeviationReport d = deviations(m, ds);
      write_csv(score_out, row_table(ds, {{"z", &d.z}, {"p", &d.p}}));
    } else if (*dist) {
      DistillOptions opt;
      opt.min_ess = dist_min_ess;
      const HyperpriorPack pack = distill(load_model(dist_model), opt);
      save_pack(dist_out, pack);
      std::cout << "reference " << pack.reference_hash << " pack " << pack_hash(pack) << "\n";
    } else if (*recal) {
      const HyperpriorPack pack = load_pack(recal_pack);
      const Dataset ds = ingest_csv(recal_data, resolve_schema(recal_data, recal_schema));
      FitOptions opt;
      opt.sampler = recal_sampler.config();
      opt.jobs = jobs;
      std::cerr << "seed " << opt.sampler.seed << "\n";
      const FittedNormativeModel m = recalibrate(pack, ds, pack.spec, opt);
      print_diagnostics(m);
      save_model(recal_out, m);
    } else if (*eval) {
      const FittedNormativeModel m = load_model(ev_model);
      const Dataset ds = load_for_model(ev_data, ev_schema, m);
      if (*ev_reg) {
        const Prediction p = predict(m, ds.covariates, ds.batch_labels);
        const MetricReport r = regression_metrics(p.mean, p.sd, ds.responses, m.standardizer);
        if (!ev_out.empty()) write_csv(ev_out, metric_table(ds.response_names, r));
        std::cout << metric_json(r).dump(2) << "\n";
      } else if (*ev_sites) {
        const DeviationReport d = deviations(m, ds);
        const SiteProbeResult r = site_probe(d.z, ds.batch_labels, probe_opts);
        json j{{"balanced_accuracy", r.balanced_accuracy}, {"chance", r.chance}, {"chance_se", r.chance_se},
               {"p_value", r.p_value}, {"rows", r.rows}, {"classes", r.classes}};
        if (!ev_out.empty()) write_file_atomic(ev_out, j.dump(2) + "\n");
        std::cout << j.dump(2) << "\n";
      } else {
        anom_opts.absolute = !anom_signed;
        const DeviationReport d = deviations(m, ds);
        const AnomalyReport r = anomaly_auc(GroupedDeviations{d.z, ds.groups}, ds.response_names, anom_reps, anom_opts);
        anomaly_table(r, ev_out);
      }
    } else if (*repro) {
      std::cerr << "seed " << repro_seed << "\n";
      if (repro_setting == "regression") return repro_regression(repro_seed, jobs, repro_probe, repro_out);
      return repro_anomaly(repro_seed, jobs, repro_out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << error_code_name(ErrorCode::io) << ": " << e.what() << "\n";
    return static_cast<int>(ErrorCode::io);
  }
  return 0;
}
