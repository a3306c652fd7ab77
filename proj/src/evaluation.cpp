#include "hbrnorm/evaluation.hpp"

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "hbrnorm/error.hpp"

namespace hbrnorm {

namespace {

constexpr double log_two_pi = 1.8378770664093454836;

std::vector<double> values(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

/// Average ranks (1-based) with ties sharing their mean rank.
Eigen::VectorXd ranks(const Eigen::VectorXd& x) {
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return x(static_cast<Eigen::Index>(a)) < x(static_cast<Eigen::Index>(b)); });
  Eigen::VectorXd r(x.size());
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x(static_cast<Eigen::Index>(order[j + 1])) == x(static_cast<Eigen::Index>(order[i]))) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r(static_cast<Eigen::Index>(order[k])) = avg;
    i = j + 1;
  }
  return r;
}

double auc_from_rank_sum(double rank_sum, double np, double nh) { return (rank_sum - np * (np + 1.0) / 2.0) / (np * nh); }

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double MetricReport::median_rho() const {
  std::vector<double> v;
  for (const auto& r : rho) {
    if (r) v.push_back(*r);
  }
  return median(v);
}

double MetricReport::median_smse() const { return median(values(smse)); }
double MetricReport::median_msll() const { return median(values(msll)); }

std::optional<double> pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) return std::nullopt;
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double saa = da.square().sum();
  const double sbb = db.square().sum();
  if (!(saa > 0.0) || !(sbb > 0.0)) return std::nullopt;
  return std::clamp((da * db).sum() / std::sqrt(saa * sbb), -1.0, 1.0);
}

MetricReport regression_metrics(const Eigen::MatrixXd& pred_mean, const Eigen::MatrixXd& pred_sd,
                                const Eigen::MatrixXd& y_test, const Eigen::VectorXd& train_mean,
                                const Eigen::VectorXd& train_variance) {
  if (pred_mean.rows() != y_test.rows() || pred_mean.cols() != y_test.cols() || pred_sd.rows() != y_test.rows() ||
      pred_sd.cols() != y_test.cols() || train_mean.size() != y_test.cols() || train_variance.size() != y_test.cols()) {
    throw Error(ErrorCode::invalid_argument, "prediction, response and baseline shapes disagree");
  }
  if (y_test.rows() == 0) throw Error(ErrorCode::invalid_argument, "no test rows");
  if (!(pred_sd.array() > 0.0).all()) throw Error(ErrorCode::invalid_argument, "predictive sd must be positive");
  if (!(train_variance.array() > 0.0).all()) throw Error(ErrorCode::invalid_argument, "baseline variance must be positive");
  const auto u = y_test.cols();
  const double n = static_cast<double>(y_test.rows());
  MetricReport r;
  r.smse.resize(u);
  r.msll.resize(u);
  for (Eigen::Index j = 0; j < u; ++j) {
    const Eigen::ArrayXd err = y_test.col(j) - pred_mean.col(j);
    const Eigen::ArrayXd var = pred_sd.col(j).array().square();
    r.rho.push_back(pearson(pred_mean.col(j), y_test.col(j)));
    r.smse(j) = err.square().mean() / train_variance(j);
    const Eigen::ArrayXd base_err = y_test.col(j).array() - train_mean(j);
    const Eigen::ArrayXd nll = 0.5 * (log_two_pi + var.log()) + err.square() / (2.0 * var);
    const Eigen::ArrayXd base_nll = 0.5 * (log_two_pi + std::log(train_variance(j))) + base_err.square() / (2.0 * train_variance(j));
    r.msll(j) = (nll - base_nll).sum() / n;
  }
  return r;
}

MetricReport regression_metrics(const Eigen::MatrixXd& pred_mean, const Eigen::MatrixXd& pred_sd,
                                const Eigen::MatrixXd& y_test, const Standardizer& train) {
  return regression_metrics(pred_mean, pred_sd, y_test, train.response_mean, train.response_variance);
}

SiteProbeResult site_probe(const Eigen::MatrixXd& z, const std::vector<std::string>& labels,
                           const SiteProbeOptions& options) {
  if (static_cast<std::size_t>(z.rows()) != labels.size()) {
    throw Error(ErrorCode::invalid_argument, "deviations and labels disagree in row count");
  }
  const BatchIndex classes(labels);
  const std::size_t m = classes.size();
  if (m < 2) throw Error(ErrorCode::degenerate_data, "site probe needs at least two batches");
  if (options.folds < 2) throw Error(ErrorCode::invalid_argument, "site probe needs at least two folds");
  for (std::size_t c = 0; c < m; ++c) {
    if (classes.counts()[c] < 5) {
      throw Error(ErrorCode::degenerate_data, "batch '" + classes.labels()[c] + "' has fewer than 5 rows");
    }
    if (classes.counts()[c] < options.folds) {
      throw Error(ErrorCode::degenerate_data, "batch '" + classes.labels()[c] + "' has fewer rows than folds");
    }
  }
  const auto n = static_cast<std::size_t>(z.rows());
  const auto d = z.cols();
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = classes.at(labels[i]);

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> fold(n);
  for (std::size_t c = 0; c < m; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] == c) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < members.size(); ++k) fold[members[k]] = k % options.folds;
  }

  std::vector<std::size_t> predicted(n);
  for (std::size_t f = 0; f < options.folds; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < n; ++i) {
      if (fold[i] != f) train.push_back(i);
    }
    // Pegasos per class, bias unregularized.
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(m));
    Eigen::VectorXd bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    for (std::size_t c = 0; c < m; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      std::size_t t = 0;
      for (std::size_t e = 0; e < options.epochs; ++e) {
        std::shuffle(train.begin(), train.end(), rng);
        for (std::size_t i : train) {
          ++t;
          const double eta = 1.0 / (options.lambda * static_cast<double>(t));
          const double target = y[i] == c ? 1.0 : -1.0;
          const auto ii = static_cast<Eigen::Index>(i);
          const double margin = target * (z.row(ii).dot(w.col(ci)) + bias(ci));
          w.col(ci) *= 1.0 - eta * options.lambda;
          if (margin < 1.0) {
            w.col(ci) += eta * target * z.row(ii).transpose();
            bias(ci) += target / static_cast<double>(t);
          }
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (fold[i] != f) continue;
      const Eigen::VectorXd score = (z.row(static_cast<Eigen::Index>(i)) * w).transpose() + bias;
      Eigen::Index best = 0;
      score.maxCoeff(&best);
      predicted[i] = static_cast<std::size_t>(best);
    }
  }

  std::vector<double> hit(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (predicted[i] == y[i]) {
      hit[y[i]] += 1.0;
    }
  }
  SiteProbeResult r;
  for (std::size_t c = 0; c < m; ++c) r.balanced_accuracy += hit[c] / static_cast<double>(classes.counts()[c]);
  r.balanced_accuracy /= static_cast<double>(m);
  r.classes = m;
  r.rows = n;
  r.chance = 1.0 / static_cast<double>(m);
  r.chance_se = std::sqrt(r.chance * (1.0 - r.chance) / static_cast<double>(n));
  const auto k = static_cast<std::size_t>(std::llround(r.balanced_accuracy * static_cast<double>(n)));
  r.p_value = k == 0 ? 1.0 : boost::math::ibeta(static_cast<double>(k), static_cast<double>(n - k + 1), r.chance);
  return r;
}

double auc(const Eigen::VectorXd& healthy, const Eigen::VectorXd& patients) {
  if (healthy.size() == 0 || patients.size() == 0) throw Error(ErrorCode::degenerate_data, "AUC needs two nonempty groups");
  Eigen::VectorXd pooled(healthy.size() + patients.size());
  pooled << healthy, patients;
  const Eigen::VectorXd r = ranks(pooled);
  return auc_from_rank_sum(r.tail(patients.size()).sum(), static_cast<double>(patients.size()),
                           static_cast<double>(healthy.size()));
}

std::vector<std::size_t> AnomalyReport::stable_units(const std::string& diagnosis) const {
  std::vector<std::size_t> out;
  const auto it = diagnoses.find(diagnosis);
  if (it == diagnoses.end()) return out;
  for (std::size_t j = 0; j < it->second.size(); ++j) {
    if (it->second[j].stable) out.push_back(j);
  }
  return out;
}

AnomalyReport anomaly_auc(const std::vector<GroupedDeviations>& repetitions, const std::vector<std::string>& unit_names,
                          const AnomalyOptions& options) {
  if (repetitions.empty()) throw Error(ErrorCode::invalid_argument, "anomaly evaluation needs at least one repetition");
  if (options.permutations < 100) throw Error(ErrorCode::invalid_argument, "at least 100 permutations are required");
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) throw Error(ErrorCode::invalid_argument, "alpha must lie in (0, 1)");
  const auto u = static_cast<Eigen::Index>(unit_names.size());

  AnomalyReport report;
  report.unit_names = unit_names;
  report.repetitions = repetitions.size();
  report.options = options;

  std::set<std::string> diagnoses;
  for (const auto& rep : repetitions) {
    if (rep.z.cols() != u || static_cast<std::size_t>(rep.z.rows()) != rep.groups.size()) {
      throw Error(ErrorCode::invalid_argument, "deviation matrix shape does not match units/groups");
    }
    for (const auto& g : rep.groups) {
      if (g != healthy_group) diagnoses.insert(diagnosis_of(g));
    }
  }
  if (diagnoses.empty()) throw Error(ErrorCode::degenerate_data, "no patient rows to evaluate");

  for (const auto& dx : diagnoses) report.diagnoses[dx].assign(static_cast<std::size_t>(u), UnitAnomaly{});

  std::mt19937_64 rng(options.seed);
  for (std::size_t r = 0; r < repetitions.size(); ++r) {
    const auto& rep = repetitions[r];
    std::vector<std::size_t> healthy;
    for (std::size_t i = 0; i < rep.groups.size(); ++i) {
      if (rep.groups[i] == healthy_group) healthy.push_back(i);
    }
    for (const auto& dx : diagnoses) {
      std::vector<std::size_t> patients;
      for (std::size_t i = 0; i < rep.groups.size(); ++i) {
        if (rep.groups[i] != healthy_group && diagnosis_of(rep.groups[i]) == dx) patients.push_back(i);
      }
      if (healthy.size() < 3 || patients.size() < 3) {
        throw Error(ErrorCode::degenerate_data, "diagnosis '" + dx + "' needs at least 3 healthy and 3 patient rows (got " +
                                                    std::to_string(healthy.size()) + "/" + std::to_string(patients.size()) + ")");
      }
      const std::size_t nh = healthy.size(), np = patients.size(), total = nh + np;
      std::vector<std::size_t> rows = healthy;
      rows.insert(rows.end(), patients.begin(), patients.end());
      auto& results = report.diagnoses[dx];
      for (Eigen::Index j = 0; j < u; ++j) {
        Eigen::VectorXd score(static_cast<Eigen::Index>(total));
        double mean_h = 0.0, mean_p = 0.0;
        for (std::size_t k = 0; k < total; ++k) {
          const double zv = rep.z(static_cast<Eigen::Index>(rows[k]), j);
          score(static_cast<Eigen::Index>(k)) = options.absolute ? std::abs(zv) : zv;
          (k < nh ? mean_h : mean_p) += zv;
        }
        mean_h /= static_cast<double>(nh);
        mean_p /= static_cast<double>(np);
        const Eigen::VectorXd rk = ranks(score);
        const double observed = auc_from_rank_sum(rk.tail(static_cast<Eigen::Index>(np)).sum(), static_cast<double>(np),
                                                  static_cast<double>(nh));
        std::vector<double> pool(rk.data(), rk.data() + rk.size());
        std::size_t exceed = 0;
        for (std::size_t b = 0; b < options.permutations; ++b) {
          // partial Fisher-Yates: first np entries form the permuted patient group
          double sum = 0.0;
          for (std::size_t k = 0; k < np; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, total - 1);
            std::swap(pool[k], pool[pick(rng)]);
            sum += pool[k];
          }
          if (auc_from_rank_sum(sum, static_cast<double>(np), static_cast<double>(nh)) >= observed - 1e-12) ++exceed;
        }
        auto& ua = results[static_cast<std::size_t>(j)];
        const double p = (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(options.permutations));
        ua.auc.push_back(observed);
        ua.p.push_back(p);
        if (p < options.alpha) ++ua.significant;
        ua.direction += mean_p > mean_h ? 1 : (mean_p < mean_h ? -1 : 0);
      }
    }
  }
  for (auto& [dx, results] : report.diagnoses) {
    for (auto& ua : results) {
      ua.stable = ua.significant == repetitions.size();
      ua.direction = ua.direction > 0 ? 1 : (ua.direction < 0 ? -1 : 0);
    }
  }
  return report;
}

AnomalyReport anomaly_auc(const GroupedDeviations& deviations, const std::vector<std::string>& unit_names,
                          std::size_t repetitions, const AnomalyOptions& options) {
  if (repetitions == 0) throw Error(ErrorCode::invalid_argument, "repetitions must be positive");
  return anomaly_auc(std::vector<GroupedDeviations>(repetitions, deviations), unit_names, options);
}

}  // namespace hbrnorm
