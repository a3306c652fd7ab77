#include "hbrnorm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "hbrnorm/error.hpp"

namespace hbrnorm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> parse_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      if (!cur.empty()) {
        throw Error(ErrorCode::io, "malformed CSV: stray quote on line " + std::to_string(line_no));
      }
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) throw Error(ErrorCode::io, "malformed CSV: unterminated quote on line " + std::to_string(line_no));
  out.push_back(std::move(cur));
  return out;
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

std::optional<double> parse_double(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

std::size_t column_of(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorCode::schema, "schema column '" + name + "' absent from CSV header");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

void Dataset::validate() const {
  const auto n = rows();
  if (static_cast<std::size_t>(responses.rows()) != n || batch_labels.size() != n || subject_ids.size() != n ||
      groups.size() != n) {
    throw Error(ErrorCode::invalid_argument, "dataset per-row containers disagree in length");
  }
  if (covariate_names.size() != num_covariates() || response_names.size() != num_units()) {
    throw Error(ErrorCode::invalid_argument, "dataset column names disagree with matrix shapes");
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.covariate_names = covariate_names;
  out.response_names = response_names;
  out.batch_dimensions = batch_dimensions;
  out.covariates.resize(static_cast<Eigen::Index>(idx.size()), covariates.cols());
  out.responses.resize(static_cast<Eigen::Index>(idx.size()), responses.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(idx[i]);
    out.covariates.row(static_cast<Eigen::Index>(i)) = covariates.row(r);
    out.responses.row(static_cast<Eigen::Index>(i)) = responses.row(r);
    out.batch_labels.push_back(batch_labels[idx[i]]);
    out.subject_ids.push_back(subject_ids[idx[i]]);
    out.groups.push_back(groups[idx[i]]);
  }
  return out;
}

Dataset Dataset::select_units(const std::vector<std::size_t>& units) const {
  Dataset out = *this;
  out.responses.resize(responses.rows(), static_cast<Eigen::Index>(units.size()));
  out.response_names.clear();
  for (std::size_t j = 0; j < units.size(); ++j) {
    if (units[j] >= num_units()) throw Error(ErrorCode::invalid_argument, "unit index out of range");
    out.responses.col(static_cast<Eigen::Index>(j)) = responses.col(static_cast<Eigen::Index>(units[j]));
    out.response_names.push_back(response_names[units[j]]);
  }
  return out;
}

Dataset Dataset::with_responses(Eigen::MatrixXd r) const {
  if (r.rows() != responses.rows() || r.cols() != responses.cols()) {
    throw Error(ErrorCode::invalid_argument, "replacement responses have the wrong shape");
  }
  Dataset out = *this;
  out.responses = std::move(r);
  return out;
}

std::string join_batch_label(const std::vector<std::string>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(batch_separator);
    out += values[i];
  }
  return out;
}

std::vector<std::string> split_batch_label(const std::string& label) { return split_list(label, batch_separator); }

std::string diagnosis_of(const std::string& group) {
  constexpr std::string_view prefix = "patient:";
  if (group.rfind(prefix, 0) == 0) return group.substr(prefix.size());
  return {};
}

BatchIndex::BatchIndex(const std::vector<std::string>& labels) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  if (counts.empty()) throw Error(ErrorCode::degenerate_data, "batch index needs at least one row");
  for (const auto& [label, c] : counts) {
    lookup_[label] = labels_.size();
    labels_.push_back(label);
    counts_.push_back(c);
  }
}

std::optional<std::size_t> BatchIndex::find(const std::string& label) const {
  const auto it = lookup_.find(label);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t BatchIndex::at(const std::string& label) const {
  const auto i = find(label);
  if (!i) throw Error(ErrorCode::unknown_batch, "batch '" + label + "' was not present at fit time");
  return *i;
}

bool Standardizer::operator==(const Standardizer& o) const {
  const auto same = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.size() == b.size() && a == b; };
  return same(covariate_mean, o.covariate_mean) && same(covariate_sd, o.covariate_sd) &&
         same(response_mean, o.response_mean) && same(response_variance, o.response_variance);
}

Standardizer Standardizer::fit(const Dataset& ds) {
  if (ds.rows() < 2) throw Error(ErrorCode::degenerate_data, "standardization needs at least two rows");
  Standardizer s;
  const double n = static_cast<double>(ds.rows());
  s.covariate_mean = ds.covariates.colwise().mean();
  s.covariate_sd.resize(ds.covariates.cols());
  for (Eigen::Index j = 0; j < ds.covariates.cols(); ++j) {
    const double var = (ds.covariates.col(j).array() - s.covariate_mean(j)).square().sum() / (n - 1.0);
    if (!(var > 0.0)) {
      throw Error(ErrorCode::degenerate_data, "covariate '" + ds.covariate_names[static_cast<std::size_t>(j)] +
                                                  "' is constant and cannot be standardized");
    }
    s.covariate_sd(j) = std::sqrt(var);
  }
  s.response_mean = ds.responses.colwise().mean();
  s.response_variance.resize(ds.responses.cols());
  for (Eigen::Index j = 0; j < ds.responses.cols(); ++j) {
    const double var = (ds.responses.col(j).array() - s.response_mean(j)).square().sum() / (n - 1.0);
    if (!(var > 0.0)) {
      throw Error(ErrorCode::degenerate_data, "response '" + ds.response_names[static_cast<std::size_t>(j)] +
                                                  "' is constant and cannot be standardized");
    }
    s.response_variance(j) = var;
  }
  return s;
}

Eigen::MatrixXd Standardizer::transform_covariates(const Eigen::MatrixXd& x) const {
  if (x.cols() != covariate_mean.size()) throw Error(ErrorCode::model_mismatch, "covariate count mismatch");
  return (x.rowwise() - covariate_mean.transpose()).array().rowwise() / covariate_sd.transpose().array();
}

Eigen::MatrixXd Standardizer::inverse_covariates(const Eigen::MatrixXd& z) const {
  return (z.array().rowwise() * covariate_sd.transpose().array()).rowwise() + covariate_mean.transpose().array();
}

Eigen::VectorXd Standardizer::transform_response(std::size_t unit, const Eigen::VectorXd& y) const {
  const auto u = static_cast<Eigen::Index>(unit);
  return (y.array() - response_mean(u)) / std::sqrt(response_variance(u));
}

Eigen::VectorXd Standardizer::inverse_response(std::size_t unit, const Eigen::VectorXd& z) const {
  const auto u = static_cast<Eigen::Index>(unit);
  return z.array() * std::sqrt(response_variance(u)) + response_mean(u);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    auto t = trim(cur);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::schema, "config line " + std::to_string(line_no) + " is not key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

CsvSchema CsvSchema::from_key_values(const std::map<std::string, std::string>& kv) {
  CsvSchema s;
  for (const auto& [key, value] : kv) {
    if (key == "id") {
      s.id_column = value;
    } else if (key == "covariates") {
      s.covariates = split_list(value);
    } else if (key == "responses") {
      s.responses = split_list(value);
    } else if (key == "batches") {
      s.batches = split_list(value);
    } else if (key == "group") {
      if (!value.empty()) s.group_column = value;
    } else {
      throw Error(ErrorCode::schema, "unknown schema key '" + key + "'");
    }
  }
  if (s.covariates.empty()) throw Error(ErrorCode::schema, "schema names no covariate column");
  if (s.responses.empty()) throw Error(ErrorCode::schema, "schema names no response column");
  if (s.batches.empty()) throw Error(ErrorCode::schema, "schema names no batch column");
  return s;
}

CsvSchema CsvSchema::load(const std::string& path) { return from_key_values(read_key_value_file(path)); }

std::map<std::string, std::string> CsvSchema::to_key_values() const {
  auto join = [](const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
  };
  std::map<std::string, std::string> kv{{"id", id_column},
                                        {"covariates", join(covariates)},
                                        {"responses", join(responses)},
                                        {"batches", join(batches)}};
  if (group_column) kv["group"] = *group_column;
  return kv;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open CSV file '" + path + "'");
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = parse_csv_line(line, line_no);
    if (t.header.empty()) {
      for (auto& f : fields) f = trim(f);
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw Error(ErrorCode::io, "malformed CSV: line " + std::to_string(line_no) + " has " +
                                     std::to_string(fields.size()) + " fields, header has " +
                                     std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw Error(ErrorCode::io, "CSV file '" + path + "' has no header row");
  return t;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + tmp + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorCode::io, "write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ostringstream os;
  auto emit = [&os](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) os << ',';
      os << quote_csv(fields[i]);
    }
    os << '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
  write_file_atomic(path, os.str());
}

Dataset ingest_csv(const std::string& path, const CsvSchema& schema) {
  const CsvTable t = read_csv(path);
  const std::size_t id_col = column_of(t.header, schema.id_column);
  std::vector<std::size_t> cov_cols, resp_cols, batch_cols;
  for (const auto& c : schema.covariates) cov_cols.push_back(column_of(t.header, c));
  for (const auto& pattern : schema.responses) {
    if (!pattern.empty() && pattern.back() == '*') {
      const std::string prefix = pattern.substr(0, pattern.size() - 1);
      bool any = false;
      for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (t.header[j].rfind(prefix, 0) == 0) {
          resp_cols.push_back(j);
          any = true;
        }
      }
      if (!any) throw Error(ErrorCode::schema, "response pattern '" + pattern + "' matches no column");
    } else {
      resp_cols.push_back(column_of(t.header, pattern));
    }
  }
  for (const auto& c : schema.batches) batch_cols.push_back(column_of(t.header, c));
  std::optional<std::size_t> group_col;
  if (schema.group_column) group_col = column_of(t.header, *schema.group_column);

  Dataset ds;
  ds.covariate_names = schema.covariates;
  for (auto j : resp_cols) ds.response_names.push_back(t.header[j]);
  ds.batch_dimensions = schema.batches;

  std::vector<std::vector<double>> cov_rows, resp_rows;
  for (const auto& row : t.rows) {
    std::vector<double> cv, rv;
    bool ok = true;
    for (auto j : cov_cols) {
      auto v = parse_double(row[j]);
      if (!v) {
        ok = false;
        break;
      }
      cv.push_back(*v);
    }
    for (std::size_t k = 0; ok && k < resp_cols.size(); ++k) {
      auto v = parse_double(row[resp_cols[k]]);
      if (!v) {
        ok = false;
        break;
      }
      rv.push_back(*v);
    }
    std::vector<std::string> bvals;
    for (std::size_t k = 0; ok && k < batch_cols.size(); ++k) {
      auto b = trim(row[batch_cols[k]]);
      if (b.empty()) ok = false;
      if (b.find(batch_separator) != std::string::npos) {
        throw Error(ErrorCode::schema, "batch value '" + b + "' contains the reserved '|' character");
      }
      bvals.push_back(std::move(b));
    }
    std::string group = healthy_group;
    if (ok && group_col) {
      group = trim(row[*group_col]);
      if (group.empty()) {
        ok = false;
      } else if (group != healthy_group && diagnosis_of(group).empty()) {
        throw Error(ErrorCode::schema, "group value '" + group + "' is neither 'healthy' nor 'patient:<diagnosis>'");
      }
    }
    if (!ok) {
      ++ds.dropped_rows;
      continue;
    }
    cov_rows.push_back(std::move(cv));
    resp_rows.push_back(std::move(rv));
    ds.batch_labels.push_back(join_batch_label(bvals));
    ds.subject_ids.push_back(trim(row[id_col]));
    ds.groups.push_back(std::move(group));
  }
  if (cov_rows.empty()) throw Error(ErrorCode::degenerate_data, "no usable rows in '" + path + "'");
  const auto n = static_cast<Eigen::Index>(cov_rows.size());
  ds.covariates.resize(n, static_cast<Eigen::Index>(cov_cols.size()));
  ds.responses.resize(n, static_cast<Eigen::Index>(resp_cols.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < ds.covariates.cols(); ++j) {
      ds.covariates(i, j) = cov_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    for (Eigen::Index j = 0; j < ds.responses.cols(); ++j) {
      ds.responses(i, j) = resp_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  if (ds.dropped_rows > 0) {
    std::cerr << "ingest: dropped " << ds.dropped_rows << " row(s) with missing or non-finite values from '" << path
              << "'\n";
  }
  return ds;
}

CsvSchema default_schema(const Dataset& ds) {
  CsvSchema s;
  s.covariates = ds.covariate_names;
  s.responses = ds.response_names;
  s.batches = ds.batch_dimensions;
  s.group_column = "group";
  return s;
}

CsvTable dataset_to_table(const Dataset& ds, const CsvSchema& schema) {
  ds.validate();
  CsvTable t;
  t.header.push_back(schema.id_column);
  for (const auto& b : ds.batch_dimensions) t.header.push_back(b);
  if (schema.group_column) t.header.push_back(*schema.group_column);
  for (const auto& c : ds.covariate_names) t.header.push_back(c);
  for (const auto& r : ds.response_names) t.header.push_back(r);
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    std::vector<std::string> row;
    row.push_back(ds.subject_ids[i]);
    auto parts = split_batch_label(ds.batch_labels[i]);
    parts.resize(ds.batch_dimensions.size());
    for (auto& p : parts) row.push_back(p);
    if (schema.group_column) row.push_back(ds.groups[i]);
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < ds.covariates.cols(); ++j) row.push_back(format_double(ds.covariates(r, j)));
    for (Eigen::Index j = 0; j < ds.responses.cols(); ++j) row.push_back(format_double(ds.responses(r, j)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_dataset_csv(const std::string& path, const Dataset& ds, const CsvSchema& schema) {
  write_csv(path, dataset_to_table(ds, schema));
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed, bool healthy_only_train) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "split fraction must lie in (0,1)");
  }
  const BatchIndex index(ds.batch_labels);
  std::vector<std::vector<std::size_t>> eligible(index.size());
  std::vector<std::size_t> test;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    if (healthy_only_train && !ds.is_healthy(i)) {
      test.push_back(i);
    } else {
      eligible[index.at(ds.batch_labels[i])].push_back(i);
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train;
  for (std::size_t b = 0; b < index.size(); ++b) {
    auto& rows = eligible[b];
    if (rows.size() < 2) {
      throw Error(ErrorCode::degenerate_data, "batch '" + index.labels()[b] + "' has fewer than 2 " +
                                                  (healthy_only_train ? "healthy " : "") +
                                                  "rows and cannot be stratified");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    take = std::clamp<std::size_t>(take, 2, rows.size());
    train.insert(train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
    test.insert(test.end(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

}  // namespace hbrnorm
