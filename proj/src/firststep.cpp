#include "richiv/firststep.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "richiv/error.hpp"
#include "richiv/normal.hpp"

namespace richiv {

namespace {

void require_finite(const FirstStepFit& fit) {
  for (Eigen::Index i = 0; i < fit.fitted.size(); ++i) {
    if (!std::isfinite(fit.fitted[i])) {
      throw Error(ErrorCode::NonFinite,
                  std::string(first_step_name(fit.method)) + " first step produced a non-finite value at row " +
                      std::to_string(i + 1),
                  first_step_name(fit.method), {static_cast<std::size_t>(i)});
    }
  }
}

[[noreturn]] void throw_degenerate(const std::vector<std::size_t>& rows, const char* what) {
  std::string list;
  for (std::size_t k = 0; k < rows.size() && k < 10; ++k) {
    list += (k ? "," : "") + std::to_string(rows[k] + 1);
  }
  if (rows.size() > 10) list += ",...";
  throw Error(ErrorCode::DegenerateDenominator,
              std::to_string(rows.size()) + " point(s) with degenerate kernel denominator in " +
                  what + " (rows " + list + ")",
              what, rows);
}

// log Phi(s) and phi(s)/Phi(s), stable for the range probit_mle visits.
struct ProbitTerms {
  double loglik;
  double mills;
};

ProbitTerms probit_terms(double s) {
  const double cdf = norm_cdf(s);
  return {std::log(cdf), norm_pdf(s) / cdf};
}

double probit_loglik(const VectorXd& xb, const VectorXd& z) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < xb.size(); ++i) {
    const double q = 2.0 * z[i] - 1.0;
    ll += std::log(norm_cdf(q * xb[i]));
  }
  return ll;
}

}  // namespace

const char* first_step_name(FirstStepMethod method) {
  switch (method) {
    case FirstStepMethod::NadarayaWatson: return "nw";
    case FirstStepMethod::Probit: return "probit";
    case FirstStepMethod::CellMeans: return "cells";
    case FirstStepMethod::Neural: return "mlp";
    case FirstStepMethod::Oracle: return "oracle";
  }
  return "unknown";
}

Smoother default_smoother(const MatrixXd& C, const KernelOrderPolicy& order,
                          const BandwidthRule& rule) {
  return {make_epanechnikov(order.resolve(static_cast<std::size_t>(C.cols()))), bandwidths(C, rule)};
}

FirstStepFit nw_regression(const MatrixXd& C, const VectorXd& v, const NwOptions& opts) {
  if (C.cols() < 1) throw Error(ErrorCode::DimensionMismatch, "NW first step needs d >= 1");
  Smoother sm = default_smoother(C, opts.order, opts.rule);
  auto nw = std::make_shared<const NwFit>(C, v, sm.kernel, sm.bandwidths);
  NwPrediction pred = nw->predict(C);
  const auto bad = pred.degenerate_rows();
  if (!bad.empty()) throw_degenerate(bad, "Nadaraya-Watson first step");

  FirstStepFit fit;
  fit.method = FirstStepMethod::NadarayaWatson;
  fit.fitted = std::move(pred.values);
  if (opts.clip_epsilon) {
    const double eps = *opts.clip_epsilon;
    fit.fitted = fit.fitted.cwiseMax(eps).cwiseMin(1.0 - eps);
    fit.diagnostics.flags.emplace_back("clipped");
  }
  fit.predictor = [nw, clip = opts.clip_epsilon](const MatrixXd& points) {
    NwPrediction p = nw->predict(points);
    const auto rows = p.degenerate_rows();
    if (!rows.empty()) throw_degenerate(rows, "Nadaraya-Watson prediction");
    if (clip) p.values = p.values.cwiseMax(*clip).cwiseMin(1.0 - *clip);
    return p.values;
  };
  fit.smoother = std::move(sm);
  require_finite(fit);
  return fit;
}

FirstStepFit fit_nw(const Dataset& ds, const NwOptions& opts) {
  return nw_regression(ds.C(), ds.z(), opts);
}

ProbitFit probit_mle(const MatrixXd& X, const VectorXd& z) {
  constexpr int kMaxIter = 100;
  constexpr int kMaxHalvings = 30;
  constexpr double kTol = 1e-8;
  constexpr double kSeparationIndex = 15.0;

  require_full_rank(X, "probit design matrix");
  const auto n = X.rows();
  if (z.minCoeff() == z.maxCoeff()) {
    throw Error(ErrorCode::Separation, "instrument is constant; the probit MLE does not exist");
  }
  ProbitFit fit;
  fit.coefficients = VectorXd::Zero(X.cols());
  VectorXd xb = VectorXd::Zero(n);
  double ll = probit_loglik(xb, z);
  VectorXd lambda(n), weight(n);

  for (int iter = 0; iter <= kMaxIter; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double q = 2.0 * z[i] - 1.0;
      const double m = probit_terms(q * xb[i]).mills;
      lambda[i] = q * m;
      weight[i] = lambda[i] * (lambda[i] + xb[i]);
    }
    const VectorXd grad = X.transpose() * lambda;
    fit.gradient_norm = grad.cwiseAbs().maxCoeff();
    fit.iterations = iter;
    fit.log_likelihood = ll;
    if (fit.gradient_norm < kTol) {
      // A fitted probability within 1e-15 of 0 or 1 means the gradient only
      // vanished because the index ran off towards infinity.
      for (Eigen::Index i = 0; i < n; ++i) {
        if (norm_cdf(-std::abs(xb[i])) < 1e-15) {
          throw Error(ErrorCode::Separation,
                      "probit fitted probability at the boundary (row " + std::to_string(i + 1) +
                          "); quasi-complete separation",
                      "", {static_cast<std::size_t>(i)});
        }
      }
      fit.converged = true;
      return fit;
    }
    if (iter == kMaxIter) break;

    const MatrixXd info = X.transpose() * weight.asDiagonal() * X;
    const VectorXd step = info.ldlt().solve(grad);
    // Once the Newton decrement is this small the expected gain in the
    // log-likelihood is below its rounding error, so the comparison in the
    // line search is noise. Take the full step.
    const bool quadratic = grad.dot(step) < 1e-9;
    double scale = 1.0;
    bool improved = false;
    VectorXd candidate, cand_xb;
    double cand_ll = ll;
    for (int h = 0; h <= kMaxHalvings; ++h, scale *= 0.5) {
      candidate = fit.coefficients + scale * step;
      cand_xb = X * candidate;
      cand_ll = probit_loglik(cand_xb, z);
      if (std::isfinite(cand_ll) && (cand_ll >= ll || quadratic)) {
        improved = true;
        break;
      }
    }
    if (!improved) break;
    if (cand_xb.cwiseAbs().maxCoeff() > kSeparationIndex && cand_ll > ll) {
      throw Error(ErrorCode::Separation,
                  "probit linear index exceeded 15 while the likelihood kept increasing "
                  "(perfect or quasi-complete separation)");
    }
    fit.coefficients = std::move(candidate);
    xb = std::move(cand_xb);
    ll = cand_ll;
  }
  throw Error(ErrorCode::NotConverged,
              "probit Newton-Raphson did not converge (gradient max-norm " +
                  std::to_string(fit.gradient_norm) + " after " + std::to_string(fit.iterations) +
                  " iterations)");
}

std::pair<ProbitFit, FirstStepFit> fit_probit(const Dataset& ds, const RegressorSpec& spec) {
  const MatrixXd X = build_regressors(ds, spec);
  ProbitFit pf = probit_mle(X, ds.z());

  FirstStepFit fit;
  fit.method = FirstStepMethod::Probit;
  fit.fitted = (X * pf.coefficients).unaryExpr([](double s) { return norm_cdf(s); });
  fit.diagnostics.iterations = pf.iterations;
  fit.diagnostics.final_loss = -pf.log_likelihood;
  fit.predictor = [spec, b = pf.coefficients](const MatrixXd& points) {
    return VectorXd((evaluate_regressors(points, spec) * b).unaryExpr([](double s) { return norm_cdf(s); }));
  };
  require_finite(fit);
  return {std::move(pf), std::move(fit)};
}

FirstStepFit cell_means_regression(const MatrixXd& C, const VectorXd& v,
                                   const std::vector<std::size_t>& key_columns) {
  if (v.size() != C.rows()) throw Error(ErrorCode::LengthMismatch, "cell means: length mismatch");
  for (auto j : key_columns) {
    if (j >= static_cast<std::size_t>(C.cols())) {
      throw Error(ErrorCode::DimensionMismatch, "cell key column " + std::to_string(j + 1) + " out of range");
    }
  }
  using Key = std::vector<double>;
  auto key_of = [key_columns](const MatrixXd& M, Eigen::Index i) {
    Key k;
    k.reserve(key_columns.size());
    for (auto j : key_columns) k.push_back(M(i, static_cast<Eigen::Index>(j)));
    return k;
  };
  std::map<Key, std::pair<double, double>> sums;
  for (Eigen::Index i = 0; i < C.rows(); ++i) {
    auto& s = sums[key_of(C, i)];
    s.first += v[i];
    s.second += 1.0;
  }
  auto means = std::make_shared<std::map<Key, double>>();
  for (const auto& [k, s] : sums) (*means)[k] = s.first / s.second;

  FirstStepFit fit;
  fit.method = FirstStepMethod::CellMeans;
  fit.fitted.resize(C.rows());
  for (Eigen::Index i = 0; i < C.rows(); ++i) fit.fitted[i] = means->at(key_of(C, i));
  fit.diagnostics.iterations = static_cast<int>(means->size());
  fit.predictor = [means, key_of](const MatrixXd& points) {
    VectorXd out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      auto it = means->find(key_of(points, i));
      if (it == means->end()) {
        throw Error(ErrorCode::PredictUnseenCell,
                    "prediction requested for a covariate cell absent from training (row " +
                        std::to_string(i + 1) + ")",
                    "", {static_cast<std::size_t>(i)});
      }
      out[i] = it->second;
    }
    return out;
  };
  require_finite(fit);
  return fit;
}

FirstStepFit fit_cell_means(const Dataset& ds, const std::vector<std::size_t>& key_columns) {
  return cell_means_regression(ds.C(), ds.z(), key_columns);
}

FirstStepFit mlp_regression(const MatrixXd& C, const VectorXd& v, const MlpConfig& cfg,
                            std::uint64_t seed) {
  auto trained = std::make_shared<MlpTrainResult>(train_mlp(C, v, cfg, seed));
  FirstStepFit fit;
  fit.method = FirstStepMethod::Neural;
  fit.fitted = trained->net.predict(C);
  fit.diagnostics.iterations = trained->epochs;
  fit.diagnostics.final_loss = trained->final_loss;
  fit.predictor = [trained](const MatrixXd& points) { return trained->net.predict(points); };
  require_finite(fit);
  return fit;
}

FirstStepFit fit_mlp(const Dataset& ds, const MlpConfig& cfg, std::uint64_t seed) {
  return mlp_regression(ds.C(), ds.z(), cfg, seed);
}

FirstStepFit oracle(std::size_t n, VectorXd values) {
  if (static_cast<std::size_t>(values.size()) != n) {
    throw Error(ErrorCode::LengthMismatch, "oracle values have length " +
                                               std::to_string(values.size()) + ", expected " +
                                               std::to_string(n));
  }
  FirstStepFit fit;
  fit.method = FirstStepMethod::Oracle;
  fit.fitted = std::move(values);
  require_finite(fit);
  return fit;
}

}  // namespace richiv
