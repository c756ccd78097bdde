#include "richiv/kernels.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <numeric>

#include "richiv/error.hpp"

namespace richiv {

namespace {

using boost::multiprecision::cpp_rational;

// int u^(2k) (3/4)(1-u^2) du over [-1,1] = 3 / ((2k+1)(2k+3))
cpp_rational base_even_moment(int k) { return cpp_rational(3, (2 * k + 1) * (2 * k + 3)); }

std::vector<cpp_rational> solve_exact(std::vector<std::vector<cpp_rational>> a,
                                      std::vector<cpp_rational> b) {
  const std::size_t m = b.size();
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t pivot = col;
    while (pivot < m && a[pivot][col] == 0) ++pivot;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t row = 0; row < m; ++row) {
      if (row == col || a[row][col] == 0) continue;
      const cpp_rational f = a[row][col] / a[col][col];
      for (std::size_t k = col; k < m; ++k) a[row][k] -= f * a[col][k];
      b[row] -= f * b[col];
    }
  }
  std::vector<cpp_rational> x(m);
  for (std::size_t i = 0; i < m; ++i) x[i] = b[i] / a[i][i];
  return x;
}

}  // namespace

std::string Rational::str() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

HigherOrderKernel make_epanechnikov(int order) {
  if (order % 2 != 0) {
    throw Error(ErrorCode::OddOrder, "kernel order must be even, got " + std::to_string(order));
  }
  if (order < 2 || order > 12) {
    throw Error(ErrorCode::OrderOutOfRange,
                "kernel order must be in [2, 12], got " + std::to_string(order));
  }
  const int m = order / 2;
  // Row i: sum_j a_j mu_{2(i+j)} = [i == 0]
  std::vector<std::vector<cpp_rational>> a(static_cast<std::size_t>(m),
                                           std::vector<cpp_rational>(static_cast<std::size_t>(m)));
  std::vector<cpp_rational> b(static_cast<std::size_t>(m), cpp_rational(0));
  b[0] = 1;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = base_even_moment(i + j);
  }
  const auto x = solve_exact(std::move(a), std::move(b));

  HigherOrderKernel k;
  k.order_ = order;
  for (const auto& c : x) {
    const auto num = boost::multiprecision::numerator(c);
    const auto den = boost::multiprecision::denominator(c);
    k.exact_.push_back({num.convert_to<std::int64_t>(), den.convert_to<std::int64_t>()});
    k.coeffs_.push_back(c.convert_to<double>());
  }
  return k;
}

double kernel_eval(const HigherOrderKernel& k, double u) { return k(u); }

double kernel_moment(const HigherOrderKernel& k, int j) {
  auto f = [&](double u) { return std::pow(u, j) * k(u); };
  return boost::math::quadrature::gauss<double, 64>::integrate(f, -1.0, 1.0);
}

int order_for_dimension(std::size_t d) {
  const int want = static_cast<int>(d) + 1;
  return want % 2 == 0 ? want : want + 1;
}

double sample_sd(const Eigen::Ref<const VectorXd>& v) {
  const auto n = v.size();
  if (n < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(n - 1));
}

VectorXd bandwidths(const MatrixXd& C, const BandwidthRule& rule) {
  const auto n = C.rows();
  const auto d = static_cast<std::size_t>(C.cols());
  if (n < 2) throw Error(ErrorCode::EmptyData, "bandwidth rule needs at least two rows");
  const double factor =
      rule.scale_for(d) * std::pow(static_cast<double>(n), rule.exponent_for(d));
  VectorXd h(C.cols());
  for (Eigen::Index j = 0; j < C.cols(); ++j) {
    double sd = 1.0;
    if (rule.scale_by_sd) {
      sd = sample_sd(C.col(j));
      if (!(sd > 0.0)) {
        throw Error(ErrorCode::DegenerateColumn,
                    "covariate column c" + std::to_string(j + 1) + " has zero spread",
                    "c" + std::to_string(j + 1));
      }
    }
    h[j] = factor * sd;
    if (!(h[j] > 0.0) || !std::isfinite(h[j])) {
      throw Error(ErrorCode::InvalidConfig, "bandwidth rule produced non-positive bandwidth");
    }
  }
  return h;
}

std::vector<std::size_t> NwPrediction::degenerate_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < status.size(); ++i) {
    if (status[i] != PointStatus::Ok) rows.push_back(i);
  }
  return rows;
}

NwFit::NwFit(MatrixXd C, VectorXd response, HigherOrderKernel kernel, VectorXd h,
             double relative_floor)
    : kernel_(std::move(kernel)), h_(std::move(h)), relative_floor_(relative_floor) {
  if (C.rows() != response.size()) {
    throw Error(ErrorCode::LengthMismatch, "NW training covariates and response differ in length");
  }
  if (C.cols() == 0 || h_.size() != C.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "bandwidth vector does not match covariate count");
  }
  if (C.rows() == 0) throw Error(ErrorCode::EmptyData, "NW fit needs training points");
  for (Eigen::Index j = 0; j < h_.size(); ++j) {
    if (!(h_[j] > 0.0)) throw Error(ErrorCode::InvalidConfig, "bandwidths must be positive");
  }
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(C.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return C(a, 0) < C(b, 0); });
  C_.resize(C.rows(), C.cols());
  response_.resize(response.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    C_.row(static_cast<Eigen::Index>(k)) = C.row(idx[k]);
    response_[static_cast<Eigen::Index>(k)] = response[idx[k]];
  }
  first_col_ = C_.col(0);
}

NwPrediction NwFit::predict(const MatrixXd& points) const {
  if (points.cols() != C_.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "evaluation points have " + std::to_string(points.cols()) + " columns, expected " +
                    std::to_string(C_.cols()));
  }
  const auto m = points.rows();
  const auto d = C_.cols();
  NwPrediction out;
  out.values.resize(m);
  out.denominators.resize(m);
  out.status.assign(static_cast<std::size_t>(m), PointStatus::Ok);

  const double* first = first_col_.data();
  const double* first_end = first + first_col_.size();
  for (Eigen::Index p = 0; p < m; ++p) {
    const double c0 = points(p, 0);
    const double* lo = std::lower_bound(first, first_end, c0 - h_[0]);
    const double* hi = std::upper_bound(lo, first_end, c0 + h_[0]);
    double num = 0.0;
    double den = 0.0;
    for (const double* it = lo; it != hi; ++it) {
      const auto i = static_cast<Eigen::Index>(it - first);
      double w = kernel_((c0 - *it) / h_[0]);
      for (Eigen::Index j = 1; j < d && w != 0.0; ++j) {
        w *= kernel_((points(p, j) - C_(i, j)) / h_[j]);
      }
      if (w == 0.0) continue;
      num += w * response_[i];
      den += w;
    }
    out.denominators[p] = den;
    out.values[p] = den != 0.0 ? num / den : 0.0;
  }

  const double max_den = m > 0 ? out.denominators.cwiseAbs().maxCoeff() : 0.0;
  std::size_t flagged = 0;
  for (Eigen::Index p = 0; p < m; ++p) {
    if (!(std::abs(out.denominators[p]) > relative_floor_ * max_den)) {
      out.status[static_cast<std::size_t>(p)] = PointStatus::DegenerateDenominator;
      ++flagged;
    }
  }
  if (m > 0 && flagged == static_cast<std::size_t>(m)) {
    throw Error(ErrorCode::AllDenominatorsDegenerate,
                "every evaluation point has a degenerate kernel denominator");
  }
  return out;
}

}  // namespace richiv
