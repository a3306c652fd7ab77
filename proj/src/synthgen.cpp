#include "hbrnorm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "hbrnorm/error.hpp"

namespace hbrnorm {

namespace {

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::schema, "config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d < 0 || d != std::floor(d)) throw Error(ErrorCode::schema, "config key '" + key + "' expects a count, got '" + v + "'");
  return static_cast<std::size_t>(d);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::schema, "config key '" + key + "' expects true/false, got '" + v + "'");
}

std::string site_name(std::size_t i, std::size_t total) {
  std::ostringstream os;
  os << "site" << std::setw(total >= 100 ? 3 : 2) << std::setfill('0') << i + 1;
  return os.str();
}

std::string unit_name(std::size_t j, std::size_t total) {
  std::ostringstream os;
  os << "roi" << std::setw(total >= 100 ? 3 : 2) << std::setfill('0') << j + 1;
  return os.str();
}

std::string join_counts(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

GenConfig GenConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  GenConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "sites") c.sites = parse_count(k, v);
    else if (k == "site_sizes") {
      c.site_sizes.clear();
      for (const auto& s : split_list(v)) c.site_sizes.push_back(parse_count(k, s));
    } else if (k == "units") c.units = parse_count(k, v);
    else if (k == "covariate_name") c.covariate_name = v;
    else if (k == "covariate_low") c.covariate_low = parse_double(k, v);
    else if (k == "covariate_high") c.covariate_high = parse_double(k, v);
    else if (k == "covariate_distribution") c.covariate_distribution = v;
    else if (k == "confound") c.confound = parse_double(k, v);
    else if (k == "intercept_mean") c.intercept_mean = parse_double(k, v);
    else if (k == "intercept_sd") c.intercept_sd = parse_double(k, v);
    else if (k == "slope_mean") c.slope_mean = parse_double(k, v);
    else if (k == "slope_sd") c.slope_sd = parse_double(k, v);
    else if (k == "noise_log_mean") c.noise_log_mean = parse_double(k, v);
    else if (k == "noise_log_sd") c.noise_log_sd = parse_double(k, v);
    else if (k == "hetero_quadratic") c.hetero_quadratic = parse_double(k, v);
    else if (k == "gender") c.gender = parse_bool(k, v);
    else if (k == "patients_per_site") c.patients_per_site = parse_count(k, v);
    else if (k == "patient_units") {
      c.patient_units.clear();
      for (const auto& s : split_list(v)) c.patient_units.push_back(parse_count(k, s));
    } else if (k == "patient_effect") c.patient_effect = parse_double(k, v);
    else if (k == "diagnosis") c.diagnosis = v;
    else throw Error(ErrorCode::schema, "unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

GenConfig GenConfig::load(const std::string& path) { return from_key_values(read_key_value_file(path)); }

std::map<std::string, std::string> GenConfig::to_key_values() const {
  return {{"sites", std::to_string(sites)},
          {"site_sizes", join_counts(site_sizes)},
          {"units", std::to_string(units)},
          {"covariate_name", covariate_name},
          {"covariate_low", format_double(covariate_low)},
          {"covariate_high", format_double(covariate_high)},
          {"covariate_distribution", covariate_distribution},
          {"confound", format_double(confound)},
          {"intercept_mean", format_double(intercept_mean)},
          {"intercept_sd", format_double(intercept_sd)},
          {"slope_mean", format_double(slope_mean)},
          {"slope_sd", format_double(slope_sd)},
          {"noise_log_mean", format_double(noise_log_mean)},
          {"noise_log_sd", format_double(noise_log_sd)},
          {"hetero_quadratic", format_double(hetero_quadratic)},
          {"gender", gender ? "true" : "false"},
          {"patients_per_site", std::to_string(patients_per_site)},
          {"patient_units", join_counts(patient_units)},
          {"patient_effect", format_double(patient_effect)},
          {"diagnosis", diagnosis}};
}

void GenConfig::validate() const {
  if (sites == 0) throw Error(ErrorCode::invalid_argument, "sites must be positive");
  if (units == 0) throw Error(ErrorCode::invalid_argument, "units must be positive");
  if (site_sizes.empty() || (site_sizes.size() != 1 && site_sizes.size() != sites)) {
    throw Error(ErrorCode::invalid_argument, "site_sizes needs one entry or one per site");
  }
  if (!(covariate_high > covariate_low)) throw Error(ErrorCode::invalid_argument, "covariate range is empty");
  if (covariate_distribution != "uniform" && covariate_distribution != "gaussian") {
    throw Error(ErrorCode::invalid_argument, "covariate_distribution must be uniform or gaussian");
  }
  if (!(confound >= 0.0 && confound <= 1.0)) throw Error(ErrorCode::invalid_argument, "confound must lie in [0, 1]");
  if (!(intercept_sd >= 0.0) || !(slope_sd >= 0.0)) throw Error(ErrorCode::invalid_argument, "hyper sds must be non-negative");
  if (!std::isfinite(noise_log_mean) || !(noise_log_sd >= 0.0) || !(hetero_quadratic >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "noise configuration must give a positive noise sd");
  }
  for (auto u : patient_units) {
    if (u >= units) throw Error(ErrorCode::invalid_argument, "patient unit " + std::to_string(u) + " out of range");
  }
  if (diagnosis.empty() || diagnosis.find(',') != std::string::npos) {
    throw Error(ErrorCode::invalid_argument, "diagnosis needs a plain name");
  }
}

std::size_t GenConfig::site_size(std::size_t site) const { return site_sizes.size() == 1 ? site_sizes[0] : site_sizes.at(site); }

double GroundTruth::noise_sd(std::size_t row, std::size_t unit) const {
  const double half = 0.5 * (covariate_high - covariate_low);
  const double u = (x(static_cast<Eigen::Index>(row)) - (covariate_low + half)) / half;
  return batch_params[unit](static_cast<Eigen::Index>(row_batch[row]), 2) * (1.0 + hetero_quadratic * u * u);
}

double GroundTruth::mean(std::size_t row, std::size_t unit) const {
  const auto b = static_cast<Eigen::Index>(row_batch[row]);
  return batch_params[unit](b, 0) + batch_params[unit](b, 1) * x(static_cast<Eigen::Index>(row));
}

Eigen::MatrixXd GroundTruth::responses() const {
  Eigen::MatrixXd y(x.size(), static_cast<Eigen::Index>(batch_params.size()));
  for (std::size_t j = 0; j < batch_params.size(); ++j) {
    for (Eigen::Index r = 0; r < x.size(); ++r) {
      const auto ru = static_cast<std::size_t>(r);
      const auto ji = static_cast<Eigen::Index>(j);
      y(r, ji) = mean(ru, j) + noise_sd(ru, j) * (eps(r, ji) + shift(r, ji));
    }
  }
  return y;
}

std::size_t GroundTruth::batch(const std::string& label) const {
  const auto it = std::find(batch_labels.begin(), batch_labels.end(), label);
  if (it == batch_labels.end()) throw Error(ErrorCode::unknown_batch, "no ground truth for batch '" + label + "'");
  return static_cast<std::size_t>(it - batch_labels.begin());
}

std::pair<Dataset, GroundTruth> generate(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  GroundTruth truth;
  truth.covariate_low = cfg.covariate_low;
  truth.covariate_high = cfg.covariate_high;
  truth.hetero_quadratic = cfg.hetero_quadratic;
  std::vector<std::string> sites;
  for (std::size_t s = 0; s < cfg.sites; ++s) sites.push_back(site_name(s, cfg.sites));
  for (const auto& s : sites) {
    if (cfg.gender) {
      truth.batch_labels.push_back(join_batch_label({s, "F"}));
      truth.batch_labels.push_back(join_batch_label({s, "M"}));
    } else {
      truth.batch_labels.push_back(s);
    }
  }
  const auto m = static_cast<Eigen::Index>(truth.batch_labels.size());
  for (std::size_t j = 0; j < cfg.units; ++j) {
    Eigen::MatrixXd p(m, 3);
    for (Eigen::Index b = 0; b < m; ++b) {
      p(b, 0) = cfg.intercept_mean + cfg.intercept_sd * normal(rng);
      p(b, 1) = cfg.slope_mean + cfg.slope_sd * normal(rng);
      p(b, 2) = std::exp(cfg.noise_log_mean + cfg.noise_log_sd * normal(rng));
    }
    truth.batch_params.push_back(std::move(p));
  }

  Dataset ds;
  ds.covariate_names = {cfg.covariate_name};
  for (std::size_t j = 0; j < cfg.units; ++j) ds.response_names.push_back(unit_name(j, cfg.units));
  ds.batch_dimensions = cfg.gender ? std::vector<std::string>{"site", "gender"} : std::vector<std::string>{"site"};

  std::vector<double> xs;
  std::vector<bool> patient;
  const double width = cfg.covariate_high - cfg.covariate_low;
  for (std::size_t s = 0; s < cfg.sites; ++s) {
    const double band = width / static_cast<double>(cfg.sites);
    const double lo = (1.0 - cfg.confound) * cfg.covariate_low + cfg.confound * (cfg.covariate_low + band * static_cast<double>(s));
    const double hi =
        (1.0 - cfg.confound) * cfg.covariate_high + cfg.confound * (cfg.covariate_low + band * static_cast<double>(s + 1));
    const std::size_t total = cfg.site_size(s) + cfg.patients_per_site;
    for (std::size_t r = 0; r < total; ++r) {
      std::string label = sites[s];
      if (cfg.gender) label = join_batch_label({sites[s], uniform(rng) < 0.5 ? "F" : "M"});
      double x;
      if (cfg.covariate_distribution == "uniform") {
        x = lo + (hi - lo) * uniform(rng);
      } else {
        x = std::clamp(0.5 * (lo + hi) + 0.25 * (hi - lo) * normal(rng), lo, hi);
      }
      const bool is_patient = r >= cfg.site_size(s);
      xs.push_back(x);
      patient.push_back(is_patient);
      truth.row_batch.push_back(truth.batch(label));
      ds.batch_labels.push_back(label);
      std::ostringstream id;
      id << "s" << std::setw(6) << std::setfill('0') << ds.subject_ids.size() + 1;
      ds.subject_ids.push_back(id.str());
      ds.groups.push_back(is_patient ? "patient:" + cfg.diagnosis : healthy_group);
    }
  }
  const auto n = static_cast<Eigen::Index>(xs.size());
  truth.x = Eigen::Map<const Eigen::VectorXd>(xs.data(), n);
  truth.eps.resize(n, static_cast<Eigen::Index>(cfg.units));
  truth.shift = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(cfg.units));
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index j = 0; j < truth.eps.cols(); ++j) truth.eps(r, j) = normal(rng);
    if (patient[static_cast<std::size_t>(r)]) {
      for (auto u : cfg.patient_units) truth.shift(r, static_cast<Eigen::Index>(u)) = cfg.patient_effect;
    }
  }
  ds.covariates = truth.x;
  ds.responses = truth.responses();
  ds.validate();
  return {std::move(ds), std::move(truth)};
}

}  // namespace hbrnorm
