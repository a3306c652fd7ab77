#include "hbrnorm/combat.hpp"

#include <algorithm>
#include <cmath>

#include "hbrnorm/error.hpp"

namespace hbrnorm {

using nlohmann::json;

namespace {

std::vector<std::size_t> design_columns(const Dataset& ds, const std::vector<std::string>& design) {
  std::vector<std::size_t> cols;
  for (const auto& name : design) {
    const auto it = std::find(ds.covariate_names.begin(), ds.covariate_names.end(), name);
    if (it == ds.covariate_names.end()) throw Error(ErrorCode::schema, "design covariate '" + name + "' not in data");
    cols.push_back(static_cast<std::size_t>(it - ds.covariate_names.begin()));
  }
  return cols;
}

std::vector<std::size_t> unit_columns(const Dataset& ds, const std::vector<std::string>& units) {
  std::vector<std::size_t> cols;
  for (const auto& name : units) {
    const auto it = std::find(ds.response_names.begin(), ds.response_names.end(), name);
    if (it == ds.response_names.end()) throw Error(ErrorCode::schema, "data lacks unit '" + name + "'");
    cols.push_back(static_cast<std::size_t>(it - ds.response_names.begin()));
  }
  return cols;
}

Eigen::MatrixXd standardized_design(const CombatModel& m, const Dataset& ds) {
  const auto cols = design_columns(ds, m.design);
  Eigen::MatrixXd z(ds.covariates.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    z.col(ci) = (ds.covariates.col(static_cast<Eigen::Index>(cols[c])).array() - m.design_mean(ci)) / m.design_sd(ci);
  }
  return z;
}

std::vector<std::size_t> batch_rows(const CombatModel& m, const Dataset& ds) {
  const BatchIndex index(m.batch_labels);
  std::vector<std::size_t> b(ds.rows());
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const auto found = index.find(ds.batch_labels[r]);
    if (!found) {
      throw Error(ErrorCode::unknown_batch,
                  "batch '" + ds.batch_labels[r] +
                      "' was not seen when the harmonization model was fitted; ComBat cannot extend to new "
                      "batches, use distill/recalibrate from the transfer module instead");
    }
    b[r] = *found;
  }
  return b;
}

double sample_variance(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

json matrix_meta(const Eigen::MatrixXd& m) { return json{{"rows", m.rows()}, {"cols", m.cols()}}; }

std::vector<double> flat(const Eigen::MatrixXd& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

Eigen::MatrixXd unflat(const Archive& a, const std::string& name) {
  const auto& shape = a.meta.at("shapes").at(name);
  const auto rows = shape.at("rows").get<Eigen::Index>();
  const auto cols = shape.at("cols").get<Eigen::Index>();
  const auto it = a.arrays.find(name);
  if (it == a.arrays.end() || static_cast<Eigen::Index>(it->second.size()) != rows * cols) {
    throw Error(ErrorCode::schema, "harmonization archive lacks or truncates '" + name + "'");
  }
  return Eigen::Map<const Eigen::MatrixXd>(it->second.data(), rows, cols);
}

}  // namespace

Eigen::MatrixXd CombatModel::additive_effects() const {
  return gamma_star.array().rowwise() * sigma.transpose().array();
}

Eigen::MatrixXd CombatModel::multiplicative_effects() const { return delta2_star.array().sqrt(); }

Eigen::MatrixXd CombatModel::design_mean_at(const Dataset& ds) const {
  const Eigen::MatrixXd z = standardized_design(*this, ds);
  Eigen::MatrixXd g = z * beta;
  g.rowwise() += alpha.transpose();
  return g;
}

CombatModel combat_fit(const Dataset& ds, const std::vector<std::string>& design, const CombatOptions& options) {
  ds.validate();
  const auto dcols = design_columns(ds, design);
  const BatchIndex batches(ds.batch_labels);
  const auto n = static_cast<Eigen::Index>(ds.rows());
  const auto m = static_cast<Eigen::Index>(batches.size());
  const auto p = static_cast<Eigen::Index>(dcols.size());
  const auto u = static_cast<Eigen::Index>(ds.num_units());

  CombatModel model;
  model.design = design;
  model.batch_labels = batches.labels();
  model.unit_names = ds.response_names;
  model.design_mean.resize(p);
  model.design_sd.resize(p);
  for (Eigen::Index c = 0; c < p; ++c) {
    const Eigen::VectorXd x = ds.covariates.col(static_cast<Eigen::Index>(dcols[static_cast<std::size_t>(c)]));
    model.design_mean(c) = x.mean();
    const double sd = std::sqrt(sample_variance(x));
    if (!(sd > 0.0)) throw Error(ErrorCode::degenerate_data, "design covariate '" + design[static_cast<std::size_t>(c)] + "' is constant");
    model.design_sd(c) = sd;
  }
  for (std::size_t b = 0; b < batches.size(); ++b) {
    if (batches.counts()[b] < 2) {
      throw Error(ErrorCode::degenerate_data, "batch '" + batches.labels()[b] + "' has fewer than 2 rows");
    }
  }

  model.alpha = Eigen::VectorXd::Zero(u);
  model.beta = Eigen::MatrixXd::Zero(p, u);
  model.sigma = Eigen::VectorXd::Ones(u);
  model.gamma_hat = Eigen::MatrixXd::Zero(m, u);
  model.delta2_hat = Eigen::MatrixXd::Ones(m, u);
  model.gamma_star = Eigen::MatrixXd::Zero(m, u);
  model.delta2_star = Eigen::MatrixXd::Ones(m, u);
  model.gamma_bar = Eigen::VectorXd::Zero(u);
  model.tau2 = Eigen::VectorXd::Zero(u);
  model.lambda = Eigen::VectorXd::Zero(u);
  model.theta = Eigen::VectorXd::Zero(u);
  model.iterations.assign(static_cast<std::size_t>(u), 0);
  if (m <= 1) return model;

  const Eigen::MatrixXd z = standardized_design(model, ds);
  std::vector<std::size_t> b(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) b[static_cast<std::size_t>(r)] = batches.at(ds.batch_labels[static_cast<std::size_t>(r)]);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, m + p);
  for (Eigen::Index r = 0; r < n; ++r) x(r, static_cast<Eigen::Index>(b[static_cast<std::size_t>(r)])) = 1.0;
  x.rightCols(p) = z;
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < m + p) {
    throw Error(ErrorCode::degenerate_data, "design is rank deficient together with the batch indicators");
  }
  Eigen::VectorXd nb(m);
  for (Eigen::Index i = 0; i < m; ++i) nb(i) = static_cast<double>(batches.counts()[static_cast<std::size_t>(i)]);

  for (Eigen::Index j = 0; j < u; ++j) {
    const Eigen::VectorXd y = ds.responses.col(j);
    const Eigen::VectorXd coef = qr.solve(y);
    const double grand = nb.dot(coef.head(m)) / static_cast<double>(n);
    const Eigen::VectorXd resid = y - x * coef;
    const double var_pooled = resid.squaredNorm() / static_cast<double>(n);
    if (!(var_pooled > 0.0)) throw Error(ErrorCode::degenerate_data, "unit '" + ds.response_names[static_cast<std::size_t>(j)] + "' has zero residual variance");
    const double sd = std::sqrt(var_pooled);
    model.alpha(j) = grand;
    model.beta.col(j) = coef.tail(p);
    model.sigma(j) = sd;

    const Eigen::VectorXd stand_mean = (z * coef.tail(p)).array() + grand;
    const Eigen::VectorXd s = (y - stand_mean) / sd;
    std::vector<std::vector<double>> by_batch(static_cast<std::size_t>(m));
    for (Eigen::Index r = 0; r < n; ++r) by_batch[b[static_cast<std::size_t>(r)]].push_back(s(r));
    Eigen::VectorXd g_hat(m), d_hat(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& v = by_batch[static_cast<std::size_t>(i)];
      const Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      g_hat(i) = e.mean();
      d_hat(i) = sample_variance(e);
    }
    const double g_bar = g_hat.mean();
    const double t2 = std::max(sample_variance(g_hat), 1e-12);
    const double d_mean = d_hat.mean();
    const double d_var = std::max(sample_variance(d_hat), 1e-12 * (1.0 + d_mean * d_mean));
    const double lam = (2.0 * d_var + d_mean * d_mean) / d_var;
    const double th = (d_mean * d_var + d_mean * d_mean * d_mean) / d_var;

    Eigen::VectorXd g_old = g_hat, d_old = d_hat;
    std::size_t it = 0;
    for (; it < options.max_iterations; ++it) {
      Eigen::VectorXd g_new(m), d_new(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        g_new(i) = (nb(i) * t2 * g_hat(i) + d_old(i) * g_bar) / (nb(i) * t2 + d_old(i));
        double ss = 0.0;
        for (double e : by_batch[static_cast<std::size_t>(i)]) ss += (e - g_new(i)) * (e - g_new(i));
        d_new(i) = (th + 0.5 * ss) / (0.5 * nb(i) + lam - 1.0);
      }
      double change = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        change = std::max(change, std::abs(g_new(i) - g_old(i)) / std::max(std::abs(g_old(i)), 1e-12));
        change = std::max(change, std::abs(d_new(i) - d_old(i)) / d_old(i));
      }
      g_old = g_new;
      d_old = d_new;
      if (change < options.tolerance) {
        ++it;
        break;
      }
    }
    model.gamma_hat.col(j) = g_hat;
    model.delta2_hat.col(j) = d_hat;
    model.gamma_star.col(j) = g_old;
    model.delta2_star.col(j) = d_old;
    model.gamma_bar(j) = g_bar;
    model.tau2(j) = t2;
    model.lambda(j) = lam;
    model.theta(j) = th;
    model.iterations[static_cast<std::size_t>(j)] = it;
  }
  return model;
}

Dataset combat_apply(const CombatModel& model, const Dataset& ds) {
  ds.validate();
  if (model.identity()) {
    unit_columns(ds, model.unit_names);
    return ds;
  }
  const auto b = batch_rows(model, ds);
  const auto cols = unit_columns(ds, model.unit_names);
  const Eigen::MatrixXd g = model.design_mean_at(ds);
  Eigen::MatrixXd y = ds.responses;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto ji = static_cast<Eigen::Index>(j);
    const auto col = static_cast<Eigen::Index>(cols[j]);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const auto bi = static_cast<Eigen::Index>(b[static_cast<std::size_t>(r)]);
      const double s = (ds.responses(r, col) - g(r, ji)) / model.sigma(ji);
      y(r, col) = (s - model.gamma_star(bi, ji)) / std::sqrt(model.delta2_star(bi, ji)) * model.sigma(ji) + g(r, ji);
    }
  }
  return ds.with_responses(std::move(y));
}

Prediction combat_unharmonize(const CombatModel& model, const Dataset& ds, const Prediction& harmonized) {
  if (harmonized.mean.rows() != static_cast<Eigen::Index>(ds.rows()) ||
      harmonized.mean.cols() != static_cast<Eigen::Index>(model.unit_names.size())) {
    throw Error(ErrorCode::invalid_argument, "prediction shape does not match the harmonization model");
  }
  if (model.identity()) return harmonized;
  const auto b = batch_rows(model, ds);
  const Eigen::MatrixXd g = model.design_mean_at(ds);
  Prediction out = harmonized;
  for (Eigen::Index j = 0; j < out.mean.cols(); ++j) {
    for (Eigen::Index r = 0; r < out.mean.rows(); ++r) {
      const auto bi = static_cast<Eigen::Index>(b[static_cast<std::size_t>(r)]);
      const double scale = std::sqrt(model.delta2_star(bi, j));
      out.mean(r, j) = g(r, j) + model.sigma(j) * model.gamma_star(bi, j) + scale * (harmonized.mean(r, j) - g(r, j));
      out.sd(r, j) = scale * harmonized.sd(r, j);
    }
  }
  return out;
}

Archive combat_to_archive(const CombatModel& model) {
  Archive a;
  a.kind = "combat_model";
  a.meta["design"] = model.design;
  a.meta["batch_labels"] = model.batch_labels;
  a.meta["unit_names"] = model.unit_names;
  a.meta["iterations"] = model.iterations;
  a.meta["shapes"] = json::object();
  auto put = [&](const std::string& name, const Eigen::MatrixXd& v) {
    a.meta["shapes"][name] = matrix_meta(v);
    a.arrays[name] = flat(v);
  };
  put("design_mean", model.design_mean);
  put("design_sd", model.design_sd);
  put("alpha", model.alpha);
  put("beta", model.beta);
  put("sigma", model.sigma);
  put("gamma_hat", model.gamma_hat);
  put("delta2_hat", model.delta2_hat);
  put("gamma_star", model.gamma_star);
  put("delta2_star", model.delta2_star);
  put("gamma_bar", model.gamma_bar);
  put("tau2", model.tau2);
  put("lambda", model.lambda);
  put("theta", model.theta);
  return a;
}

CombatModel combat_from_archive(const Archive& a) {
  expect_kind(a, "combat_model");
  CombatModel m;
  try {
    m.design = a.meta.at("design").get<std::vector<std::string>>();
    m.batch_labels = a.meta.at("batch_labels").get<std::vector<std::string>>();
    m.unit_names = a.meta.at("unit_names").get<std::vector<std::string>>();
    m.iterations = a.meta.at("iterations").get<std::vector<std::size_t>>();
    m.design_mean = unflat(a, "design_mean");
    m.design_sd = unflat(a, "design_sd");
    m.alpha = unflat(a, "alpha");
    m.beta = unflat(a, "beta");
    m.sigma = unflat(a, "sigma");
    m.gamma_hat = unflat(a, "gamma_hat");
    m.delta2_hat = unflat(a, "delta2_hat");
    m.gamma_star = unflat(a, "gamma_star");
    m.delta2_star = unflat(a, "delta2_star");
    m.gamma_bar = unflat(a, "gamma_bar");
    m.tau2 = unflat(a, "tau2");
    m.lambda = unflat(a, "lambda");
    m.theta = unflat(a, "theta");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("malformed harmonization archive: ") + e.what());
  }
  return m;
}

void save_combat(const std::string& path, const CombatModel& model) { write_archive(path, combat_to_archive(model)); }

CombatModel load_combat(const std::string& path) { return combat_from_archive(read_archive(path)); }

}  // namespace hbrnorm
