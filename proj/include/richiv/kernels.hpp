#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "richiv/data.hpp"

namespace richiv {

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  friend bool operator==(const Rational&, const Rational&) = default;
};

// Symmetric polynomial kernel K(u) = B(u) * (3/4)(1 - u^2) on [-1, 1], zero
// outside, where B(u) = sum_j coeffs[j] * u^(2j). The coefficients are the
// exact solution of the moment system, so all moments 1..order-1 vanish.
class HigherOrderKernel {
 public:
  int order() const { return order_; }
  const std::vector<double>& coeffs() const { return coeffs_; }
  const std::vector<Rational>& exact_coeffs() const { return exact_; }

  double operator()(double u) const {
    if (!(u > -1.0 && u < 1.0)) return 0.0;
    const double u2 = u * u;
    double b = 0.0;
    for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) b = b * u2 + *it;
    return b * 0.75 * (1.0 - u2);
  }

 private:
  friend HigherOrderKernel make_epanechnikov(int order);
  int order_ = 2;
  std::vector<double> coeffs_;
  std::vector<Rational> exact_;
};

// Epanechnikov-based kernel of the given even order, 2 <= order <= 12.
HigherOrderKernel make_epanechnikov(int order);

double kernel_eval(const HigherOrderKernel& k, double u);

// int_{-1}^{1} u^j K(u) du by 64-node Gauss-Legendre (exact for these
// polynomial integrands).
double kernel_moment(const HigherOrderKernel& k, int j);

// Smallest even order >= d + 1.
int order_for_dimension(std::size_t d);

struct KernelOrderPolicy {
  std::optional<int> order;  // empty: order_for_dimension(d)
  int resolve(std::size_t d) const { return order ? *order : order_for_dimension(d); }
};

// h_j = scale * sd_j * n^exponent. Defaults reproduce the simulation rule
// (1.1 + 0.725 d) * sd_j * n^(-1/(2d+1)).
struct BandwidthRule {
  std::optional<double> scale;
  std::optional<double> exponent;
  bool scale_by_sd = true;

  double scale_for(std::size_t d) const { return scale ? *scale : 1.1 + 0.725 * static_cast<double>(d); }
  double exponent_for(std::size_t d) const {
    return exponent ? *exponent : -1.0 / (2.0 * static_cast<double>(d) + 1.0);
  }
};

// Sample standard deviation with divisor n-1.
double sample_sd(const Eigen::Ref<const VectorXd>& v);

VectorXd bandwidths(const MatrixXd& C, const BandwidthRule& rule);

enum class PointStatus : std::uint8_t { Ok, DegenerateDenominator };

struct NwPrediction {
  VectorXd values;
  VectorXd denominators;
  std::vector<PointStatus> status;

  std::vector<std::size_t> degenerate_rows() const;
  bool all_ok() const { return degenerate_rows().empty(); }
};

// Nadaraya-Watson regression with a product kernel. Training points are kept
// sorted on the first covariate so each prediction only visits the window
// |c_1 - c_i1| < h_1.
class NwFit {
 public:
  NwFit(MatrixXd C, VectorXd response, HigherOrderKernel kernel, VectorXd h,
        double relative_floor = 1e-10);

  // Values are not clipped; higher-order kernels can leave [0, 1]. A point is
  // flagged when |denominator| <= relative_floor * max |denominator| over the
  // evaluation points. Throws AllDenominatorsDegenerate if every point is.
  NwPrediction predict(const MatrixXd& points) const;

  const HigherOrderKernel& kernel() const { return kernel_; }
  const VectorXd& bandwidths() const { return h_; }
  std::size_t dim() const { return static_cast<std::size_t>(C_.cols()); }

 private:
  MatrixXd C_;  // rows in sorted order
  VectorXd response_;
  VectorXd first_col_;
  HigherOrderKernel kernel_;
  VectorXd h_;
  double relative_floor_;
};

}  // namespace richiv
