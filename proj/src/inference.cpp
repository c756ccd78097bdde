#include "richiv/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "richiv/error.hpp"

namespace richiv {

namespace {

void require_single_solve(const IVEstimate& est) {
  if (est.Q.size() == 0 || est.residuals.size() == 0) {
    throw Error(ErrorCode::InvalidConfig,
                "variance needs a single-solve estimate (cross-fit aggregates carry no score matrix)");
  }
}

MatrixXd invert_g(const MatrixXd& G) {
  Eigen::JacobiSVD<MatrixXd> svd(G);
  const auto& s = svd.singularValues();
  if (!(s(0) > 0.0) || s(s.size() - 1) / s(0) < 1e-12) {
    throw Error(ErrorCode::SingularG, "Jacobian G = Q'X/n is singular");
  }
  return G.fullPivLu().inverse();
}

VarianceEstimate sandwich(const MatrixXd& Q, const MatrixXd& X, const MatrixXd& tau,
                          VarianceMethod method) {
  const double n = static_cast<double>(Q.rows());
  const MatrixXd Ginv = invert_g(Q.transpose() * X / n);
  const MatrixXd omega = tau.transpose() * tau / n;
  MatrixXd V = Ginv * omega * Ginv.transpose() / n;
  VarianceEstimate out;
  out.method = method;
  out.covariance = 0.5 * (V + V.transpose());
  out.se = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

VectorXd smooth_residuals(const IVEstimate& est, const Smoother& smoother, const Dataset& ds,
                          const CorrectionOptions& opts) {
  if (opts.zero_residual_smooth) return VectorXd::Zero(est.residuals.size());
  if (static_cast<std::size_t>(est.residuals.size()) != ds.n()) {
    throw Error(ErrorCode::LengthMismatch, "estimate and dataset differ in row count");
  }
  const NwFit nw(ds.C(), est.residuals, smoother.kernel, smoother.bandwidths);
  NwPrediction pred = nw.predict(ds.C());
  const auto bad = pred.degenerate_rows();
  if (!bad.empty()) {
    throw Error(ErrorCode::DegenerateDenominator,
                std::to_string(bad.size()) +
                    " point(s) with degenerate kernel denominator when smoothing residuals",
                "residual smoother", bad);
  }
  return pred.values;
}

void add_cluster_warning(VarianceEstimate& v, const Dataset& ds) {
  if (ds.has_clusters()) {
    v.warnings.emplace_back(
        "corrected variance assumes independent observations; cluster ids are ignored");
  }
}

}  // namespace

const char* variance_method_name(VarianceMethod method) {
  switch (method) {
    case VarianceMethod::CorrectedIR: return "corrected-ir";
    case VarianceMethod::CorrectedCF: return "corrected-cf";
    case VarianceMethod::NaiveHC0: return "hc0";
    case VarianceMethod::ClusterRobust: return "cluster";
  }
  return "unknown";
}

MatrixXd ir_scores(const IVEstimate& est, const VectorXd& residual_smooth) {
  require_single_solve(est);
  MatrixXd tau = est.Q.array().colwise() * est.residuals.array();
  // phi_i = (-z*_i m(c_i), 0')
  tau.col(0) -= est.Q.col(0).cwiseProduct(residual_smooth);
  return tau;
}

MatrixXd cf_scores(const IVEstimate& est, const VectorXd& residual_smooth) {
  require_single_solve(est);
  if (!est.phi_index) throw Error(ErrorCode::InvalidConfig, "not a control-function estimate");
  const auto p = est.Q.cols();
  const double phi = est.phi();
  const VectorXd& zeta = est.zeta;
  const VectorXd zstar = est.Q.col(0) - zeta;
  MatrixXd tau = est.Q.array().colwise() * est.residuals.array();
  // phi*_i = z*_i (-phi zeta_i, -phi r_i', m(c_i) - phi zeta_i)'
  tau.col(0) -= phi * zstar.cwiseProduct(zeta);
  for (Eigen::Index j = 1; j <= est.r_cols; ++j) {
    tau.col(j) -= phi * zstar.cwiseProduct(est.Q.col(j));
  }
  tau.col(p - 1) += zstar.cwiseProduct(residual_smooth - phi * zeta);
  return tau;
}

VarianceEstimate ir_variance(const IVEstimate& est, const Smoother& smoother, const Dataset& ds,
                             const CorrectionOptions& opts) {
  if (est.kind != EstimatorKind::InstrumentResidual && est.kind != EstimatorKind::Psr &&
      est.kind != EstimatorKind::Dml) {
    throw Error(ErrorCode::InvalidConfig, "ir_variance needs an instrument-residual estimate");
  }
  require_single_solve(est);
  VectorXd m = smooth_residuals(est, smoother, ds, opts);
  VarianceEstimate v = sandwich(est.Q, est.X, ir_scores(est, m), VarianceMethod::CorrectedIR);
  v.residual_smooth = std::move(m);
  add_cluster_warning(v, ds);
  return v;
}

VarianceEstimate cf_variance(const IVEstimate& est, const Smoother& smoother, const Dataset& ds,
                             const CorrectionOptions& opts) {
  if (est.kind != EstimatorKind::ControlFunction) {
    throw Error(ErrorCode::InvalidConfig, "cf_variance needs a control-function estimate");
  }
  require_single_solve(est);
  VectorXd m = smooth_residuals(est, smoother, ds, opts);
  VarianceEstimate v = sandwich(est.Q, est.X, cf_scores(est, m), VarianceMethod::CorrectedCF);
  v.residual_smooth = std::move(m);
  add_cluster_warning(v, ds);
  return v;
}

VarianceEstimate naive_iv_variance(const IVEstimate& est, std::optional<std::span<const int>> cluster) {
  require_single_solve(est);
  const MatrixXd scores = est.Q.array().colwise() * est.residuals.array();
  const MatrixXd Minv = invert_g(est.Q.transpose() * est.X);
  MatrixXd meat;
  VarianceMethod method = VarianceMethod::NaiveHC0;
  if (cluster) {
    if (cluster->size() != static_cast<std::size_t>(scores.rows())) {
      throw Error(ErrorCode::LengthMismatch, "cluster ids do not match the estimate's row count");
    }
    std::map<int, Eigen::Index> index;
    for (int id : *cluster) index.emplace(id, 0);
    if (index.size() < 2) {
      throw Error(ErrorCode::SingleCluster, "cluster-robust variance needs at least two clusters");
    }
    Eigen::Index g = 0;
    for (auto& [id, slot] : index) slot = g++;
    MatrixXd sums = MatrixXd::Zero(g, scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      sums.row(index.at((*cluster)[static_cast<std::size_t>(i)])) += scores.row(i);
    }
    meat = sums.transpose() * sums;
    method = VarianceMethod::ClusterRobust;
  } else {
    meat = scores.transpose() * scores;
  }
  const MatrixXd V = Minv * meat * Minv.transpose();
  VarianceEstimate out;
  out.method = method;
  out.covariance = 0.5 * (V + V.transpose());
  out.se = out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

}  // namespace richiv
