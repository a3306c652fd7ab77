#ifndef HBRNORM_DATA_HPP
#define HBRNORM_DATA_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hbrnorm {

inline constexpr char batch_separator = '|';
inline constexpr const char* healthy_group = "healthy";

/// Batched covariate/response table. Immutable after construction by
/// convention; every per-row container has rows() entries.
struct Dataset {
  Eigen::MatrixXd covariates;  // n x p
  Eigen::MatrixXd responses;   // n x u
  std::vector<std::string> covariate_names;
  std::vector<std::string> response_names;
  /// Names of the batch dimensions, e.g. {"site", "gender"}.
  std::vector<std::string> batch_dimensions;
  /// Composite label per row: dimension values joined by '|'.
  std::vector<std::string> batch_labels;
  std::vector<std::string> subject_ids;
  /// "healthy" or "patient:<diagnosis>".
  std::vector<std::string> groups;
  /// Rows dropped at ingestion because of missing or non-finite values.
  std::size_t dropped_rows = 0;

  std::size_t rows() const { return static_cast<std::size_t>(covariates.rows()); }
  std::size_t num_covariates() const { return static_cast<std::size_t>(covariates.cols()); }
  std::size_t num_units() const { return static_cast<std::size_t>(responses.cols()); }

  bool is_healthy(std::size_t row) const { return groups[row] == healthy_group; }

  /// Throws if the per-row containers disagree in length.
  void validate() const;

  Dataset subset(const std::vector<std::size_t>& rows) const;
  Dataset select_units(const std::vector<std::size_t>& units) const;
  Dataset with_responses(Eigen::MatrixXd responses) const;
};

std::string join_batch_label(const std::vector<std::string>& values);
std::vector<std::string> split_batch_label(const std::string& label);

/// Diagnosis part of a "patient:<diagnosis>" group tag; empty for healthy rows.
std::string diagnosis_of(const std::string& group);

/// Dense 0..m-1 index over composite batch labels, in sorted label order.
class BatchIndex {
 public:
  BatchIndex() = default;
  explicit BatchIndex(const std::vector<std::string>& labels);

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::size_t>& counts() const { return counts_; }

  std::optional<std::size_t> find(const std::string& label) const;
  /// Throws ErrorCode::unknown_batch when the label was not seen.
  std::size_t at(const std::string& label) const;
  bool contains(const std::string& label) const { return find(label).has_value(); }

 private:
  std::vector<std::string> labels_;
  std::vector<std::size_t> counts_;
  std::map<std::string, std::size_t> lookup_;
};

/// Training-set centring and scaling constants.
struct Standardizer {
  Eigen::VectorXd covariate_mean;
  Eigen::VectorXd covariate_sd;
  Eigen::VectorXd response_mean;
  /// Sample variance (n - 1 denominator) per response unit.
  Eigen::VectorXd response_variance;

  static Standardizer fit(const Dataset& ds);

  Eigen::MatrixXd transform_covariates(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd inverse_covariates(const Eigen::MatrixXd& z) const;
  double response_sd(std::size_t unit) const { return std::sqrt(response_variance(unit)); }
  Eigen::VectorXd transform_response(std::size_t unit, const Eigen::VectorXd& y) const;
  Eigen::VectorXd inverse_response(std::size_t unit, const Eigen::VectorXd& z) const;

  bool operator==(const Standardizer& o) const;
};

/// Which CSV columns play which role.
struct CsvSchema {
  std::string id_column = "subject_id";
  std::vector<std::string> covariates;
  /// Column names; an entry ending in '*' matches every column with that prefix.
  std::vector<std::string> responses;
  std::vector<std::string> batches;
  std::optional<std::string> group_column;

  static CsvSchema from_key_values(const std::map<std::string, std::string>& kv);
  static CsvSchema load(const std::string& path);
  std::map<std::string, std::string> to_key_values() const;
};

/// Parses "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> read_key_value_file(const std::string& path);
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::vector<std::string> split_list(const std::string& s, char sep = ',');

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);
std::string format_double(double v);

/// Reads a dataset. Rows with any missing or non-finite covariate/response
/// value are dropped; the count is kept in Dataset::dropped_rows and
/// reported on stderr when nonzero.
Dataset ingest_csv(const std::string& path, const CsvSchema& schema);
CsvTable dataset_to_table(const Dataset& ds, const CsvSchema& schema);
void write_dataset_csv(const std::string& path, const Dataset& ds, const CsvSchema& schema);

/// Schema naming the columns that write_dataset_csv emits for ds.
CsvSchema default_schema(const Dataset& ds);

/// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::string& path, const std::string& contents);

/// Batch-stratified random split. With healthy_only_train, training rows
/// are drawn from healthy rows only and every patient lands in the test set.
std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed,
                                  bool healthy_only_train);

}  // namespace hbrnorm

#endif
