#pragma once

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace richiv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Named numeric columns, as read from a CSV file before validation.
struct RawTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
};

// Validated estimation input: outcome y, binary treatment t, binary
// instrument z, covariates C (n x d) and optional cluster ids.
//
// Instances are only produced by validate()/make_dataset() and are immutable.
class Dataset {
 public:
  std::size_t n() const { return static_cast<std::size_t>(y_.size()); }
  std::size_t d() const { return static_cast<std::size_t>(C_.cols()); }

  const VectorXd& y() const { return y_; }
  const VectorXd& t() const { return t_; }
  const VectorXd& z() const { return z_; }
  const MatrixXd& C() const { return C_; }

  bool has_clusters() const { return !cluster_.empty(); }
  // Cluster index in 0..G-1 per row (empty when no clusters).
  const std::vector<int>& cluster() const { return cluster_; }
  int n_clusters() const { return n_clusters_; }

  // Same data with y replaced; used for scaling checks and resampling.
  Dataset with_outcome(VectorXd y) const;
  // Rows in the given order (duplicates allowed).
  Dataset select_rows(std::span<const std::size_t> rows) const;

 private:
  Dataset() = default;
  friend Dataset make_dataset(VectorXd, VectorXd, VectorXd, MatrixXd,
                              std::optional<std::vector<long long>>);
  VectorXd y_, t_, z_;
  MatrixXd C_;
  std::vector<int> cluster_;
  int n_clusters_ = 0;
};

// Checks every Dataset invariant. Cluster ids are re-indexed to 0..G-1 in
// ascending order of the original id.
Dataset make_dataset(VectorXd y, VectorXd t, VectorXd z, MatrixXd C,
                     std::optional<std::vector<long long>> cluster = std::nullopt);

// Expects columns y, t, z, c1..cd (in that order) and an optional trailing
// `cluster` column.
Dataset validate(const RawTable& table);

// Inverse of validate(): the table validate() would accept for `ds`.
RawTable to_table(const Dataset& ds);

RawTable read_csv(std::istream& in);
RawTable read_csv_file(const std::string& path);
// 17 significant digits so that read_csv(write_csv(x)) is exact.
void write_csv(std::ostream& out, const RawTable& table);

// One generated regressor column: a function of a covariate row.
struct Transform {
  std::string name;
  std::function<double(std::span<const double>)> fn;

  static Transform identity(std::size_t column);
  static Transform power(std::size_t column, int exponent);
  // 1 when covariate `column` equals `value` exactly.
  static Transform indicator(std::size_t column, double value);
};

struct RegressorSpec {
  bool include_intercept = true;
  std::vector<Transform> columns;

  // Intercept plus the d identity coordinates.
  static RegressorSpec identity(std::size_t d, bool intercept = true);
  std::size_t width() const { return columns.size() + (include_intercept ? 1 : 0); }
  std::vector<std::string> labels() const;
};

// Evaluates the spec on covariate rows, without a rank check. Column order:
// intercept (if any), then transforms in declaration order.
MatrixXd evaluate_regressors(const MatrixXd& C, const RegressorSpec& spec);

// evaluate_regressors plus the full-column-rank check (smallest singular
// value must exceed 1e-10 times the largest).
MatrixXd build_regressors(const Dataset& ds, const RegressorSpec& spec);
void require_full_rank(const MatrixXd& R, const std::string& what);

enum class ComplierType { NeverTaker, Complier, AlwaysTaker };

// (0,0) -> NT, (0,1) -> C, (1,1) -> AT. (1,0) is a defier and throws.
ComplierType complier_type(int t0, int t1);
const char* complier_type_name(ComplierType type);

}  // namespace richiv
