#include "richiv/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "richiv/error.hpp"

namespace richiv {

namespace {

void check_binary(const VectorXd& v, const char* name) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0 && v[i] != 1.0) {
      throw Error(ErrorCode::NonBinaryColumn,
                  std::string("column ") + name + " has value " + std::to_string(v[i]) +
                      " at row " + std::to_string(i + 1),
                  name, {static_cast<std::size_t>(i)});
    }
  }
}

void check_finite(const double* data, std::size_t count, std::size_t stride_rows,
                  const std::string& name) {
  for (std::size_t k = 0; k < count; ++k) {
    if (!std::isfinite(data[k])) {
      const std::size_t row = stride_rows ? k % stride_rows : k;
      throw Error(ErrorCode::NonFinite,
                  "non-finite value in column " + name + " at row " + std::to_string(row + 1),
                  name, {row});
    }
  }
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Dataset make_dataset(VectorXd y, VectorXd t, VectorXd z, MatrixXd C,
                     std::optional<std::vector<long long>> cluster) {
  const auto n = y.size();
  if (n == 0) throw Error(ErrorCode::EmptyData, "dataset has no rows");
  if (t.size() != n || z.size() != n || C.rows() != n ||
      (cluster && static_cast<Eigen::Index>(cluster->size()) != n)) {
    throw Error(ErrorCode::RaggedColumns, "columns have different lengths");
  }
  check_finite(y.data(), y.size(), 0, "y");
  check_finite(t.data(), t.size(), 0, "t");
  check_finite(z.data(), z.size(), 0, "z");
  check_finite(C.data(), static_cast<std::size_t>(C.size()), static_cast<std::size_t>(n), "c");
  check_binary(t, "t");
  check_binary(z, "z");

  Dataset ds;
  ds.y_ = std::move(y);
  ds.t_ = std::move(t);
  ds.z_ = std::move(z);
  ds.C_ = std::move(C);
  if (cluster) {
    std::vector<long long> ids = *cluster;
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    ds.cluster_.reserve(cluster->size());
    for (long long id : *cluster) {
      ds.cluster_.push_back(
          static_cast<int>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin()));
    }
    ds.n_clusters_ = static_cast<int>(ids.size());
  }
  return ds;
}

Dataset Dataset::with_outcome(VectorXd y) const {
  if (y.size() != y_.size()) {
    throw Error(ErrorCode::LengthMismatch, "replacement outcome has wrong length");
  }
  Dataset copy = *this;
  check_finite(y.data(), y.size(), 0, "y");
  copy.y_ = std::move(y);
  return copy;
}

Dataset Dataset::select_rows(std::span<const std::size_t> rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  VectorXd y(m), t(m), z(m);
  MatrixXd C(m, C_.cols());
  std::optional<std::vector<long long>> cl;
  if (has_clusters()) cl.emplace();
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(rows[k]);
    y[k] = y_[i];
    t[k] = t_[i];
    z[k] = z_[i];
    C.row(k) = C_.row(i);
    if (cl) cl->push_back(cluster_[i]);
  }
  return make_dataset(std::move(y), std::move(t), std::move(z), std::move(C), std::move(cl));
}

Dataset validate(const RawTable& table) {
  const auto& names = table.names;
  if (names.size() != table.columns.size()) {
    throw Error(ErrorCode::RaggedColumns, "header and column count differ");
  }
  auto expect = [&](std::size_t idx, const std::string& name) {
    if (idx >= names.size() || names[idx] != name) {
      throw Error(ErrorCode::MissingColumn, "expected column '" + name + "' at position " +
                                                std::to_string(idx + 1),
                  name);
    }
  };
  expect(0, "y");
  expect(1, "t");
  expect(2, "z");
  const bool has_cluster = names.back() == "cluster";
  const std::size_t d = names.size() - 3 - (has_cluster ? 1 : 0);
  if (d < 1 || names.size() < 4) {
    throw Error(ErrorCode::MissingColumn, "at least one covariate column c1 is required", "c1");
  }
  for (std::size_t j = 0; j < d; ++j) expect(3 + j, "c" + std::to_string(j + 1));

  const std::size_t n = table.columns[0].size();
  for (std::size_t k = 0; k < table.columns.size(); ++k) {
    if (table.columns[k].size() != n) {
      throw Error(ErrorCode::RaggedColumns,
                  "column " + names[k] + " has " + std::to_string(table.columns[k].size()) +
                      " rows, expected " + std::to_string(n),
                  names[k]);
    }
  }
  if (n == 0) throw Error(ErrorCode::EmptyData, "table has no rows");

  auto to_vec = [&](std::size_t k) {
    return VectorXd(Eigen::Map<const VectorXd>(table.columns[k].data(),
                                               static_cast<Eigen::Index>(n)));
  };
  MatrixXd C(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) C.col(static_cast<Eigen::Index>(j)) = to_vec(3 + j);

  std::optional<std::vector<long long>> cluster;
  if (has_cluster) {
    const auto& col = table.columns.back();
    cluster.emplace();
    cluster->reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = col[i];
      if (!std::isfinite(v) || v != std::floor(v)) {
        throw Error(ErrorCode::NonFinite,
                    "cluster id at row " + std::to_string(i + 1) + " is not an integer",
                    "cluster", {i});
      }
      cluster->push_back(static_cast<long long>(v));
    }
  }
  return make_dataset(to_vec(0), to_vec(1), to_vec(2), std::move(C), std::move(cluster));
}

RawTable to_table(const Dataset& ds) {
  RawTable table;
  const auto n = ds.n();
  auto push = [&](std::string name, const VectorXd& v) {
    table.names.push_back(std::move(name));
    table.columns.emplace_back(v.data(), v.data() + n);
  };
  push("y", ds.y());
  push("t", ds.t());
  push("z", ds.z());
  for (std::size_t j = 0; j < ds.d(); ++j) {
    push("c" + std::to_string(j + 1), ds.C().col(static_cast<Eigen::Index>(j)));
  }
  if (ds.has_clusters()) {
    table.names.push_back("cluster");
    table.columns.emplace_back(ds.cluster().begin(), ds.cluster().end());
  }
  return table;
}

RawTable read_csv(std::istream& in) {
  RawTable table;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyData, "missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.names = split_line(line);
  table.columns.resize(table.names.size());

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_line(line);
    if (cells.size() != table.names.size()) {
      throw Error(ErrorCode::RaggedColumns,
                  "data row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " fields, header has " + std::to_string(table.names.size()),
                  "", {row - 1});
    }
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const std::string& cell = cells[k];
      double v = 0.0;
      const char* first = cell.data();
      const char* last = first + cell.size();
      if (!cell.empty() && *first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (cell.empty() || ec != std::errc() || ptr != last) {
        throw Error(ErrorCode::ParseError,
                    "cannot parse '" + cell + "' in column " + table.names[k] + " at data row " +
                        std::to_string(row),
                    table.names[k], {row - 1});
      }
      table.columns[k].push_back(v);
    }
  }
  return table;
}

RawTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path, path);
  return read_csv(in);
}

void write_csv(std::ostream& out, const RawTable& table) {
  for (std::size_t k = 0; k < table.names.size(); ++k) {
    out << (k ? "," : "") << table.names[k];
  }
  out << '\n';
  const std::size_t n = table.columns.empty() ? 0 : table.columns[0].size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < table.columns.size(); ++k) {
      out << (k ? "," : "") << format_double(table.columns[k][i]);
    }
    out << '\n';
  }
}

Transform Transform::identity(std::size_t column) {
  return {"c" + std::to_string(column + 1),
          [column](std::span<const double> c) { return c[column]; }};
}

Transform Transform::power(std::size_t column, int exponent) {
  return {"c" + std::to_string(column + 1) + "^" + std::to_string(exponent),
          [column, exponent](std::span<const double> c) { return std::pow(c[column], exponent); }};
}

Transform Transform::indicator(std::size_t column, double value) {
  return {"c" + std::to_string(column + 1) + "==" + format_double(value),
          [column, value](std::span<const double> c) { return c[column] == value ? 1.0 : 0.0; }};
}

RegressorSpec RegressorSpec::identity(std::size_t d, bool intercept) {
  RegressorSpec spec;
  spec.include_intercept = intercept;
  for (std::size_t j = 0; j < d; ++j) spec.columns.push_back(Transform::identity(j));
  return spec;
}

std::vector<std::string> RegressorSpec::labels() const {
  std::vector<std::string> out;
  if (include_intercept) out.emplace_back("intercept");
  for (const auto& col : columns) out.push_back(col.name);
  return out;
}

MatrixXd evaluate_regressors(const MatrixXd& C, const RegressorSpec& spec) {
  const auto n = C.rows();
  MatrixXd R(n, static_cast<Eigen::Index>(spec.width()));
  Eigen::Index offset = 0;
  if (spec.include_intercept) {
    R.col(0).setOnes();
    offset = 1;
  }
  std::vector<double> row(static_cast<std::size_t>(C.cols()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < C.cols(); ++j) row[static_cast<std::size_t>(j)] = C(i, j);
    for (std::size_t k = 0; k < spec.columns.size(); ++k) {
      const double v = spec.columns[k].fn(row);
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFinite,
                    "transform " + spec.columns[k].name + " is not finite at row " +
                        std::to_string(i + 1),
                    spec.columns[k].name, {static_cast<std::size_t>(i)});
      }
      R(i, offset + static_cast<Eigen::Index>(k)) = v;
    }
  }
  return R;
}

void require_full_rank(const MatrixXd& R, const std::string& what) {
  if (R.cols() == 0) return;
  if (R.rows() < R.cols()) {
    throw Error(ErrorCode::RankDeficient, what + " has more columns than rows", what);
  }
  Eigen::BDCSVD<MatrixXd> svd(R);
  const auto& s = svd.singularValues();
  const double largest = s.maxCoeff();
  const double smallest = s.minCoeff();
  if (!(largest > 0.0) || smallest < 1e-10 * largest) {
    throw Error(ErrorCode::RankDeficient,
                what + " is rank deficient (singular value ratio " +
                    std::to_string(largest > 0 ? smallest / largest : 0.0) + ")",
                what);
  }
}

MatrixXd build_regressors(const Dataset& ds, const RegressorSpec& spec) {
  MatrixXd R = evaluate_regressors(ds.C(), spec);
  require_full_rank(R, "regressor matrix");
  return R;
}

ComplierType complier_type(int t0, int t1) {
  if (t0 == 0 && t1 == 0) return ComplierType::NeverTaker;
  if (t0 == 0 && t1 == 1) return ComplierType::Complier;
  if (t0 == 1 && t1 == 1) return ComplierType::AlwaysTaker;
  throw Error(ErrorCode::InvalidConfig, "defier (t0=1, t1=0) or non-binary potential treatment");
}

const char* complier_type_name(ComplierType type) {
  switch (type) {
    case ComplierType::NeverTaker: return "never-taker";
    case ComplierType::Complier: return "complier";
    case ComplierType::AlwaysTaker: return "always-taker";
  }
  return "unknown";
}

}  // namespace richiv
