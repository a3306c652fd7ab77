#include "hbrnorm/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "hbrnorm/error.hpp"

namespace hbrnorm {

using nlohmann::json;

namespace {

// Moments over sorted values, so they do not depend on draw order even in
// the last bit.
Eigen::VectorXd sorted(Eigen::VectorXd v) {
  std::sort(v.begin(), v.end());
  return v;
}

double mean_of(const Eigen::VectorXd& v) { return sorted(v).mean(); }

double sd_of(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const Eigen::VectorXd s = sorted(v);
  const double m = s.mean();
  return std::sqrt((s.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

double floor_scale(double scale, double loc) { return std::max(scale, 1e-3 * std::abs(loc) + 1e-6); }

std::vector<Prior> distill_block(const FittedNormativeModel& ref, std::size_t unit, const std::string& name,
                                 const DistillOptions& options) {
  const auto& draws = ref.units[unit].draws;
  const auto found = draws.layout.find(name);
  if (!found) return {};
  const ParamBlock& b = draws.layout.block(*found);
  std::vector<Prior> out;
  for (std::size_t e = 0; e < b.size; ++e) {
    const std::size_t d = b.offset + e;
    const double ess = ref.units[unit].diagnostics.ess_bulk.at(d);
    if (!(ess >= options.min_ess)) {
      std::ostringstream msg;
      msg << "unit '" << ref.units[unit].name << "': " << draws.layout.element_name(d) << " has only "
          << std::fixed << std::setprecision(1) << ess << " effective draws (need " << options.min_ess << ")";
      throw Error(ErrorCode::diagnostics, msg.str());
    }
    out.push_back(distill_element(draws.parameter(d), b.support));
  }
  return out;
}

Eigen::VectorXd block_mean(const PosteriorDraws& draws, const std::string& name) {
  const ParamBlock& b = draws.layout.at(name);
  Eigen::VectorXd m(static_cast<Eigen::Index>(b.size));
  for (std::size_t e = 0; e < b.size; ++e) m(static_cast<Eigen::Index>(e)) = mean_of(draws.parameter(b.offset + e));
  return m;
}

void check_structure(const HyperpriorPack& pack, const ModelSpec& spec, const Dataset& ds) {
  if (spec.strategy != Strategy::hbr) throw Error(ErrorCode::model_mismatch, "recalibration needs the hbr strategy");
  if (spec.mean_degree != pack.spec.mean_degree) {
    throw Error(ErrorCode::model_mismatch, "mean degree " + std::to_string(spec.mean_degree) +
                                               " differs from the pack's " + std::to_string(pack.spec.mean_degree));
  }
  if (!(spec.noise == pack.spec.noise)) {
    throw Error(ErrorCode::model_mismatch, "noise form " + noise_form_name(spec.noise) + " differs from the pack's " +
                                               noise_form_name(pack.spec.noise));
  }
  if (spec.clamp_group_scale != pack.spec.clamp_group_scale) {
    throw Error(ErrorCode::model_mismatch, "group-scale clamping differs from the pack");
  }
  if (ds.num_covariates() != pack.covariate_names.size()) {
    throw Error(ErrorCode::model_mismatch, "data has " + std::to_string(ds.num_covariates()) +
                                               " covariates, pack expects " +
                                               std::to_string(pack.covariate_names.size()));
  }
}

}  // namespace

std::size_t HyperpriorPack::unit_index(const std::string& name) const {
  const auto it = std::find(unit_names.begin(), unit_names.end(), name);
  if (it == unit_names.end()) throw Error(ErrorCode::model_mismatch, "pack has no unit named '" + name + "'");
  return static_cast<std::size_t>(it - unit_names.begin());
}

Prior distill_element(const Eigen::VectorXd& draws, Support support) {
  if (draws.size() == 0) throw Error(ErrorCode::invalid_argument, "cannot distill an empty draw set");
  if (support == Support::real) {
    const double loc = mean_of(draws);
    return Prior::normal(loc, floor_scale(sd_of(draws), loc));
  }
  if ((draws.array() <= 0.0).any()) {
    throw Error(ErrorCode::invalid_argument, "positive hyperparameter has non-positive draws");
  }
  const Eigen::VectorXd logs = draws.array().log();
  const double loc = mean_of(logs);
  return Prior::log_normal(loc, floor_scale(sd_of(logs), loc));
}

HyperpriorPack distill(const FittedNormativeModel& reference, const DistillOptions& options) {
  if (reference.spec.strategy != Strategy::hbr) {
    throw Error(ErrorCode::model_mismatch,
                "only hbr models have hyperparameters to distill (got " + strategy_name(reference.spec.strategy) + ")");
  }
  HyperpriorPack pack;
  pack.spec = reference.spec;
  pack.spec.hyperpriors.clear();
  pack.covariate_names = reference.covariate_names;
  pack.reference_batches = reference.batch_labels;
  pack.standardizer = reference.standardizer;
  pack.reference_hash = model_hash(reference);
  for (std::size_t j = 0; j < reference.units.size(); ++j) {
    const auto& u = reference.units[j];
    if (u.diagnostics.max_rhat > options.rhat_fail) {
      std::ostringstream msg;
      msg << "unit '" << u.name << "' has not converged (R-hat " << u.diagnostics.max_rhat << ")";
      throw Error(ErrorCode::diagnostics, msg.str());
    }
    pack.unit_names.push_back(u.name);
    pack.hyperpriors.push_back(UnitHyperpriors{distill_block(reference, j, "mu_theta_mu", options),
                                               distill_block(reference, j, "sigma_theta_mu", options),
                                               distill_block(reference, j, "mu_theta_sigma", options),
                                               distill_block(reference, j, "sigma_theta_sigma", options)});
    pack.mu_theta_mu_mean.push_back(block_mean(u.draws, "mu_theta_mu"));
    pack.mu_theta_sigma_mean.push_back(block_mean(u.draws, "mu_theta_sigma"));
    pack.draw_count = std::max(pack.draw_count, u.draws.total());
  }
  return pack;
}

FittedNormativeModel recalibrate(const HyperpriorPack& pack, const Dataset& ds_new, const ModelSpec& spec,
                                 const FitOptions& options) {
  ds_new.validate();
  check_structure(pack, spec, ds_new);
  const std::set<std::string> seen(pack.reference_batches.begin(), pack.reference_batches.end());
  for (const auto& l : ds_new.batch_labels) {
    if (seen.count(l)) {
      throw Error(ErrorCode::model_mismatch, "batch '" + l + "' was part of the reference; recalibration expects new batches");
    }
  }

  // Reorder/select units to follow the pack.
  std::vector<std::size_t> cols;
  for (const auto& name : pack.unit_names) {
    const auto it = std::find(ds_new.response_names.begin(), ds_new.response_names.end(), name);
    if (it == ds_new.response_names.end()) {
      throw Error(ErrorCode::model_mismatch, "new data lacks unit '" + name + "' present in the pack");
    }
    cols.push_back(static_cast<std::size_t>(it - ds_new.response_names.begin()));
  }
  Dataset ds = ds_new.select_units(cols);
  ds.covariate_names = pack.covariate_names;

  ModelSpec s = spec;
  s.hyperpriors = pack.hyperpriors;
  FitOptions opt = options;
  opt.standardizer = pack.standardizer;
  FittedNormativeModel model = fit(s, ds, opt);
  model.pack_hash = pack_hash(pack);
  return model;
}

Prediction predict_priors_only(const HyperpriorPack& pack, const Eigen::MatrixXd& covariates) {
  if (static_cast<std::size_t>(covariates.cols()) != pack.covariate_names.size()) {
    throw Error(ErrorCode::model_mismatch, "pack expects " + std::to_string(pack.covariate_names.size()) +
                                               " covariates, got " + std::to_string(covariates.cols()));
  }
  const Eigen::MatrixXd z = pack.standardizer.transform_covariates(covariates);
  const Eigen::MatrixXd phi = polynomial_basis(z, pack.spec.mean_degree);
  const bool hetero = pack.spec.noise.heteroscedastic;
  const Eigen::MatrixXd psi = hetero ? polynomial_basis(z, pack.spec.noise.degree) : Eigen::MatrixXd();
  const auto n = covariates.rows();
  const auto u = static_cast<Eigen::Index>(pack.unit_names.size());
  Prediction out{Eigen::MatrixXd(n, u), Eigen::MatrixXd(n, u)};
  for (Eigen::Index j = 0; j < u; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const Eigen::VectorXd mean_std = phi * pack.mu_theta_mu_mean[ju];
    Eigen::VectorXd sigma(n);
    if (hetero) {
      sigma = (psi * pack.mu_theta_sigma_mean[ju]).unaryExpr([](double v) { return softplus(v); });
    } else {
      sigma.setConstant(pack.mu_theta_sigma_mean[ju](0));
    }
    const double y_sd = pack.standardizer.response_sd(ju);
    out.mean.col(j) = (pack.standardizer.response_mean(j) + y_sd * mean_std.array()).matrix();
    out.sd.col(j) = y_sd * sigma;
  }
  return out;
}

Archive pack_to_archive(const HyperpriorPack& pack) {
  Archive a;
  a.kind = "hyperprior_pack";
  a.meta["spec"] = spec_to_json(pack.spec);
  a.meta["covariate_names"] = pack.covariate_names;
  a.meta["unit_names"] = pack.unit_names;
  a.meta["reference_batches"] = pack.reference_batches;
  a.meta["standardizer"] = standardizer_to_json(pack.standardizer);
  a.meta["reference_hash"] = pack.reference_hash;
  a.meta["draw_count"] = pack.draw_count;
  ModelSpec holder;
  holder.hyperpriors = pack.hyperpriors;
  a.meta["hyperpriors"] = spec_to_json(holder).at("hyperpriors");
  for (std::size_t j = 0; j < pack.unit_names.size(); ++j) {
    const auto& mm = pack.mu_theta_mu_mean[j];
    const auto& ms = pack.mu_theta_sigma_mean[j];
    a.arrays["mu_theta_mu_mean/" + std::to_string(j)] = std::vector<double>(mm.data(), mm.data() + mm.size());
    a.arrays["mu_theta_sigma_mean/" + std::to_string(j)] = std::vector<double>(ms.data(), ms.data() + ms.size());
  }
  return a;
}

HyperpriorPack pack_from_archive(const Archive& a) {
  expect_kind(a, "hyperprior_pack");
  HyperpriorPack pack;
  try {
    pack.spec = spec_from_json(a.meta.at("spec"));
    pack.covariate_names = a.meta.at("covariate_names").get<std::vector<std::string>>();
    pack.unit_names = a.meta.at("unit_names").get<std::vector<std::string>>();
    pack.reference_batches = a.meta.at("reference_batches").get<std::vector<std::string>>();
    pack.standardizer = standardizer_from_json(a.meta.at("standardizer"));
    pack.reference_hash = a.meta.at("reference_hash").get<std::string>();
    pack.draw_count = a.meta.at("draw_count").get<std::size_t>();
    json holder = spec_to_json(ModelSpec{});
    holder["hyperpriors"] = a.meta.at("hyperpriors");
    pack.hyperpriors = spec_from_json(holder).hyperpriors;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("malformed hyperprior pack: ") + e.what());
  }
  auto array = [&](const std::string& name) {
    const auto it = a.arrays.find(name);
    if (it == a.arrays.end()) throw Error(ErrorCode::schema, "hyperprior pack lacks array '" + name + "'");
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(it->second.data(),
                                                             static_cast<Eigen::Index>(it->second.size())));
  };
  for (std::size_t j = 0; j < pack.unit_names.size(); ++j) {
    pack.mu_theta_mu_mean.push_back(array("mu_theta_mu_mean/" + std::to_string(j)));
    pack.mu_theta_sigma_mean.push_back(array("mu_theta_sigma_mean/" + std::to_string(j)));
  }
  if (pack.hyperpriors.size() != pack.unit_names.size()) {
    throw Error(ErrorCode::schema, "hyperprior pack unit count is inconsistent");
  }
  return pack;
}

void save_pack(const std::string& path, const HyperpriorPack& pack) { write_archive(path, pack_to_archive(pack)); }

HyperpriorPack load_pack(const std::string& path) { return pack_from_archive(read_archive(path)); }

std::string pack_hash(const HyperpriorPack& pack) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(serialize_archive(pack_to_archive(pack)));
  return os.str();
}

}  // namespace hbrnorm
