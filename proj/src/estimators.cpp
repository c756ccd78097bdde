#include "richiv/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "richiv/error.hpp"
#include "richiv/random.hpp"

namespace richiv {

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

void check_first_step(const Dataset& ds, const FirstStepFit& fs) {
  if (static_cast<std::size_t>(fs.fitted.size()) != ds.n()) {
    throw Error(ErrorCode::LengthMismatch,
                "first-step values have length " + std::to_string(fs.fitted.size()) +
                    ", dataset has " + std::to_string(ds.n()) + " rows");
  }
}

std::vector<std::string> default_r_labels(Eigen::Index k) {
  std::vector<std::string> out;
  for (Eigen::Index j = 0; j < k; ++j) out.push_back("r" + std::to_string(j + 1));
  return out;
}

}  // namespace

const char* estimator_kind_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Live: return "live";
    case EstimatorKind::InstrumentResidual: return "ir";
    case EstimatorKind::ControlFunction: return "cf";
    case EstimatorKind::Psr: return "psr";
    case EstimatorKind::Dml: return "dml";
  }
  return "unknown";
}

IVEstimate live_solve(const MatrixXd& Q, const MatrixXd& X, const VectorXd& y,
                      std::vector<std::string> labels) {
  if (Q.cols() > X.cols()) {
    throw Error(ErrorCode::Overidentified, "more instruments than regressors; only just-identified models are supported");
  }
  if (Q.cols() != X.cols() || Q.rows() != X.rows() || y.size() != X.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "instrument, regressor and outcome shapes disagree");
  }
  const auto p = X.cols();
  if (p == 0 || p > X.rows()) {
    throw Error(ErrorCode::RankDeficient, "need 1 <= p <= n regressors");
  }
  const MatrixXd M = Q.transpose() * X;
  const VectorXd Qy = Q.transpose() * y;
  Eigen::JacobiSVD<MatrixXd> svd(M);
  const auto& s = svd.singularValues();
  const double rcond = s(0) > 0.0 ? s(p - 1) / s(0) : 0.0;
  if (!(rcond >= 1e-12)) {
    throw Error(ErrorCode::SingularMoment,
                "Q'X is singular (reciprocal condition number " + std::to_string(rcond) +
                    "); the instrument is weak or invalid for this specification");
  }
  const auto lu = M.fullPivLu();
  VectorXd beta = lu.solve(Qy);
  beta += lu.solve(VectorXd(Qy - M * beta));  // one step of iterative refinement

  IVEstimate est;
  est.beta = std::move(beta);
  est.labels = labels.empty() ? default_r_labels(p) : std::move(labels);
  est.residuals = y - X * est.beta;
  est.Q = Q;
  est.X = X;
  est.rcond = rcond;
  return est;
}

IVEstimate live_estimate(const Dataset& ds, const RegressorSpec& spec) {
  const MatrixXd R = build_regressors(ds, spec);
  const auto k = R.cols();
  MatrixXd Q(R.rows(), k + 1), X(R.rows(), k + 1);
  Q << ds.z(), R;
  X << ds.t(), R;
  std::vector<std::string> labels{"alpha"};
  for (auto& l : spec.labels()) labels.push_back(l);
  IVEstimate est = live_solve(Q, X, ds.y(), std::move(labels));
  est.kind = EstimatorKind::Live;
  est.r_cols = k;
  return est;
}

IVEstimate ir_estimate(const Dataset& ds, const MatrixXd& R, const FirstStepFit& fs,
                       std::vector<std::string> r_labels) {
  check_first_step(ds, fs);
  const auto k = R.cols();
  if (R.rows() != static_cast<Eigen::Index>(ds.n())) {
    throw Error(ErrorCode::LengthMismatch, "regressor matrix has wrong row count");
  }
  if (k > 0) require_full_rank(R, "regressor matrix");
  MatrixXd Q(R.rows(), k + 1), X(R.rows(), k + 1);
  Q << ds.z() - fs.fitted, R;
  X << ds.t(), R;
  if (r_labels.empty()) r_labels = default_r_labels(k);
  std::vector<std::string> labels{"alpha"};
  labels.insert(labels.end(), r_labels.begin(), r_labels.end());
  IVEstimate est = live_solve(Q, X, ds.y(), std::move(labels));
  est.kind = EstimatorKind::InstrumentResidual;
  est.r_cols = k;
  est.zeta = fs.fitted;
  return est;
}

IVEstimate ir_estimate(const Dataset& ds, const RegressorSpec& spec, const FirstStepFit& fs) {
  return ir_estimate(ds, build_regressors(ds, spec), fs, spec.labels());
}

IVEstimate cf_estimate(const Dataset& ds, const MatrixXd& R, const FirstStepFit& fs,
                       std::vector<std::string> r_labels) {
  check_first_step(ds, fs);
  const auto k = R.cols();
  if (R.rows() != static_cast<Eigen::Index>(ds.n())) {
    throw Error(ErrorCode::LengthMismatch, "regressor matrix has wrong row count");
  }
  if (k > 0) require_full_rank(R, "regressor matrix");

  const VectorXd& zeta = fs.fitted;
  const double zeta_norm = zeta.norm();
  double resid_norm = zeta_norm;
  if (k > 0) {
    const VectorXd coef = R.colPivHouseholderQr().solve(zeta);
    resid_norm = (zeta - R * coef).norm();
  }
  if (!(resid_norm > 1e-10 * zeta_norm)) {
    throw Error(ErrorCode::CollinearControlFunction,
                "first-step values lie in the span of the regressors r; the control function is not identified");
  }

  MatrixXd Q(R.rows(), k + 2), X(R.rows(), k + 2);
  Q << ds.z(), R, zeta;
  X << ds.t(), R, zeta;
  if (r_labels.empty()) r_labels = default_r_labels(k);
  std::vector<std::string> labels{"alpha"};
  labels.insert(labels.end(), r_labels.begin(), r_labels.end());
  labels.emplace_back("phi");
  IVEstimate est = live_solve(Q, X, ds.y(), std::move(labels));
  est.kind = EstimatorKind::ControlFunction;
  est.r_cols = k;
  est.phi_index = k + 1;
  est.zeta = zeta;
  return est;
}

IVEstimate cf_estimate(const Dataset& ds, const RegressorSpec& spec, const FirstStepFit& fs) {
  return cf_estimate(ds, build_regressors(ds, spec), fs, spec.labels());
}

IVEstimate psr_estimate(const Dataset& ds) {
  const auto probit = fit_probit(ds, RegressorSpec::identity(ds.d()));
  const MatrixXd ones = MatrixXd::Ones(static_cast<Eigen::Index>(ds.n()), 1);
  IVEstimate est = ir_estimate(ds, ones, probit.second, {"intercept"});
  est.kind = EstimatorKind::Psr;
  return est;
}

FirstStepFit NwLearner::fit(const MatrixXd& C, const VectorXd& v, Nuisance, std::uint64_t) const {
  return nw_regression(C, v, opts_);
}

FirstStepFit MlpLearner::fit(const MatrixXd& C, const VectorXd& v, Nuisance,
                             std::uint64_t seed) const {
  return mlp_regression(C, v, cfg_, seed);
}

FirstStepFit CellMeansLearner::fit(const MatrixXd& C, const VectorXd& v, Nuisance,
                                   std::uint64_t) const {
  return cell_means_regression(C, v, key_);
}

FirstStepFit FunctionLearner::fit(const MatrixXd& C, const VectorXd& v, Nuisance target,
                                  std::uint64_t) const {
  const Predictor& f = target == Nuisance::Instrument ? instrument_
                       : target == Nuisance::Outcome  ? outcome_
                                                      : treatment_;
  FirstStepFit fit = oracle(static_cast<std::size_t>(v.size()), f(C));
  fit.predictor = f;
  return fit;
}

std::vector<int> assign_folds(const Dataset& ds, int folds, std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorCode::InvalidConfig, "cross-fitting needs at least 2 folds");
  const std::size_t units = ds.has_clusters() ? static_cast<std::size_t>(ds.n_clusters()) : ds.n();
  if (units < static_cast<std::size_t>(folds)) {
    throw Error(ErrorCode::FoldTooSmall, "fewer " + std::string(ds.has_clusters() ? "clusters" : "observations") +
                                             " than folds");
  }
  std::vector<std::size_t> perm(units);
  for (std::size_t u = 0; u < units; ++u) perm[u] = u;
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<int> unit_fold(units);
  for (std::size_t pos = 0; pos < units; ++pos) unit_fold[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(folds));

  std::vector<int> fold(ds.n());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    fold[i] = unit_fold[ds.has_clusters() ? static_cast<std::size_t>(ds.cluster()[i]) : i];
  }
  return fold;
}

IVEstimate dml_estimate(const Dataset& ds, const NuisanceLearner& learner,
                        const std::optional<CrossFitPlan>& plan, std::uint64_t seed) {
  const std::vector<std::string> r_labels{"intercept", "m_y", "m_t"};
  const auto n = static_cast<Eigen::Index>(ds.n());

  auto solve_with = [&](const VectorXd& zeta, const VectorXd& my, const VectorXd& mt) {
    MatrixXd R(n, 3);
    R << VectorXd::Ones(n), my, mt;
    IVEstimate est = ir_estimate(ds, R, oracle(ds.n(), zeta), r_labels);
    est.kind = EstimatorKind::Dml;
    return est;
  };

  if (!plan) {
    const FirstStepFit fz = learner.fit(ds.C(), ds.z(), Nuisance::Instrument, derive_seed(seed, 0));
    const FirstStepFit fy = learner.fit(ds.C(), ds.y(), Nuisance::Outcome, derive_seed(seed, 1));
    const FirstStepFit ft = learner.fit(ds.C(), ds.t(), Nuisance::Treatment, derive_seed(seed, 2));
    return solve_with(fz.fitted, fy.fitted, ft.fitted);
  }

  if (plan->splits < 1) throw Error(ErrorCode::InvalidConfig, "cross-fitting needs at least one split");
  constexpr Eigen::Index kParams = 4;  // alpha, intercept, m_y, m_t
  std::vector<double> alphas;
  std::vector<VectorXd> betas;
  for (int s = 0; s < plan->splits; ++s) {
    const std::uint64_t split_seed = derive_seed(plan->seed, static_cast<std::uint64_t>(s));
    const std::vector<int> fold = assign_folds(ds, plan->folds, split_seed);
    VectorXd zeta(n), my(n), mt(n);
    for (int k = 0; k < plan->folds; ++k) {
      std::vector<std::size_t> train, held;
      for (std::size_t i = 0; i < ds.n(); ++i) (fold[i] == k ? held : train).push_back(i);
      if (static_cast<Eigen::Index>(held.size()) < kParams ||
          static_cast<Eigen::Index>(train.size()) < kParams) {
        throw Error(ErrorCode::FoldTooSmall,
                    "fold " + std::to_string(k + 1) + " of split " + std::to_string(s + 1) +
                        " has " + std::to_string(held.size()) + " observations");
      }
      const Dataset tr = ds.select_rows(train);
      MatrixXd C_held(static_cast<Eigen::Index>(held.size()), ds.C().cols());
      for (std::size_t h = 0; h < held.size(); ++h) C_held.row(static_cast<Eigen::Index>(h)) = ds.C().row(static_cast<Eigen::Index>(held[h]));

      const std::uint64_t fold_seed = derive_seed(split_seed, static_cast<std::uint64_t>(k) + 1);
      const auto predict = [&](const VectorXd& v, Nuisance target, std::uint64_t idx) {
        const FirstStepFit f = learner.fit(tr.C(), v, target, derive_seed(fold_seed, idx));
        if (!f.predictor) throw Error(ErrorCode::InvalidConfig, "learner cannot predict held-out rows");
        return f.predictor(C_held);
      };
      const VectorXd pz = predict(tr.z(), Nuisance::Instrument, 0);
      const VectorXd py = predict(tr.y(), Nuisance::Outcome, 1);
      const VectorXd pt = predict(tr.t(), Nuisance::Treatment, 2);
      for (std::size_t h = 0; h < held.size(); ++h) {
        const auto i = static_cast<Eigen::Index>(held[h]);
        const auto hh = static_cast<Eigen::Index>(h);
        zeta[i] = pz[hh];
        my[i] = py[hh];
        mt[i] = pt[hh];
      }
    }
    IVEstimate est = solve_with(zeta, my, mt);
    alphas.push_back(est.alpha());
    betas.push_back(est.beta);
  }

  IVEstimate agg;
  agg.kind = EstimatorKind::Dml;
  agg.labels = {"alpha", "intercept", "m_y", "m_t"};
  agg.r_cols = 3;
  agg.beta.resize(betas.front().size());
  for (Eigen::Index j = 0; j < agg.beta.size(); ++j) {
    std::vector<double> col;
    for (const auto& b : betas) col.push_back(b[j]);
    agg.beta[j] = median_of(std::move(col));
  }
  agg.split_alphas = std::move(alphas);
  return agg;
}

}  // namespace richiv
