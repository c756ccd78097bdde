#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "richiv/error.hpp"
#include "richiv/estimators.hpp"
#include "richiv/random.hpp"
#include "richiv/simulation.hpp"

using namespace richiv;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected richiv::Error");
  return ErrorCode::IoError;
}

// One covariate with four support points and a heterogeneous effect.
Dataset discrete_dataset(int n, std::uint64_t seed) {
  const double level[4] = {-1.5, -0.5, 0.5, 2.0};
  const double pz[4] = {0.2, 0.5, 0.7, 0.4};
  Rng rng(seed);
  VectorXd y(n), t(n), z(n);
  MatrixXd C(n, 1);
  for (int i = 0; i < n; ++i) {
    const auto g = rng.below(4);
    const double c = level[g];
    C(i, 0) = c;
    z[i] = rng.uniform() < pz[g] ? 1.0 : 0.0;
    const double v = rng.normal();
    const int t0 = v < -0.8 + 0.2 * c ? 1 : 0;
    const int t1 = v < 0.6 + 0.2 * c ? 1 : 0;
    t[i] = z[i] == 1.0 ? t1 : t0;
    y[i] = 1.0 + (0.5 + 0.3 * c) * t[i] + c * c + 0.5 * v + rng.normal();
  }
  return make_dataset(y, t, z, C);
}

MatrixXd dummies(const Dataset& ds) {
  std::map<double, Eigen::Index> cell;
  for (Eigen::Index i = 0; i < ds.C().rows(); ++i) cell.emplace(ds.C()(i, 0), 0);
  Eigen::Index k = 0;
  for (auto& [v, idx] : cell) idx = k++;
  MatrixXd D = MatrixXd::Zero(ds.C().rows(), k);
  for (Eigen::Index i = 0; i < ds.C().rows(); ++i) D(i, cell[ds.C()(i, 0)]) = 1.0;
  return D;
}

// Textbook two-stage least squares on the saturated model: regress t on
// (z, cell dummies), then y on (fitted t, cell dummies).
double saturated_2sls(const Dataset& ds) {
  const MatrixXd D = dummies(ds);
  const auto n = D.rows();
  MatrixXd W(n, D.cols() + 1);
  W << ds.z(), D;
  const VectorXd that = W * W.colPivHouseholderQr().solve(ds.t());
  MatrixXd V(n, D.cols() + 1);
  V << that, D;
  return V.colPivHouseholderQr().solve(ds.y())[0];
}

double moment_violation(const IVEstimate& est, const VectorXd& y) {
  const VectorXd m = est.Q.transpose() * (y - est.X * est.beta);
  return m.cwiseAbs().maxCoeff() / (1.0 + (est.Q.transpose() * y).cwiseAbs().maxCoeff());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_type7(v, 0.5);
}

double iqr(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_type7(v, 0.75) - quantile_type7(v, 0.25);
}

}  // namespace

TEST_SUITE("estimators") {

TEST_CASE("scalar IV by hand") {
  MatrixXd Q(2, 1), X(2, 1);
  Q << 1, 2;
  X << 1, 1;
  VectorXd y(2);
  y << 2, 3;
  CHECK(live_solve(Q, X, y).beta[0] == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("own instruments give least squares") {
  Rng rng(2);
  MatrixXd X(60, 3);
  VectorXd y(60);
  for (Eigen::Index i = 0; i < 60; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    X(i, 2) = rng.normal();
    y[i] = rng.normal();
  }
  const VectorXd ols = X.householderQr().solve(y);
  CHECK((live_solve(X, X, y).beta - ols).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("singular and overidentified systems") {
  MatrixXd Q(2, 1), X(2, 1);
  Q << 1, -1;
  X << 1, 1;
  CHECK(code_of([&] { live_solve(Q, X, VectorXd::Ones(2)); }) == ErrorCode::SingularMoment);
  CHECK(code_of([&] { live_solve(MatrixXd::Ones(3, 2), MatrixXd::Ones(3, 1), VectorXd::Ones(3)); }) ==
        ErrorCode::Overidentified);
}

TEST_CASE("saturated model: IR, CF and two-stage least squares coincide") {
  const Dataset ds = discrete_dataset(2000, 31);
  const auto cells = fit_cell_means(ds, {0});
  const auto spec = RegressorSpec::identity(1);
  const double ir = ir_estimate(ds, spec, cells).alpha();
  const double cf = cf_estimate(ds, spec, cells).alpha();
  const double tsls = saturated_2sls(ds);
  CHECK(std::fabs(ir - cf) < 1e-8);
  CHECK(std::fabs(ir - tsls) < 1e-8);

  // the residualised instrument is orthogonal to every regressor
  const MatrixXd R = build_regressors(ds, spec);
  const VectorXd orth = R.transpose() * (ds.z() - cells.fitted);
  CHECK(orth.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("constant first step reduces IR to LIVE") {
  const Dataset ds = discrete_dataset(500, 3);
  const auto fs = oracle(ds.n(), VectorXd::Constant(static_cast<Eigen::Index>(ds.n()), ds.z().mean()));
  const auto spec = RegressorSpec::identity(1);
  const double ir = ir_estimate(ds, spec, fs).alpha();
  const double live = live_estimate(ds, spec).alpha();
  CHECK(ir == doctest::Approx(live).epsilon(1e-10));
}

TEST_CASE("control function collinear with the regressors") {
  const Dataset ds = discrete_dataset(300, 4);
  const VectorXd lin = (0.3 + 0.05 * ds.C().col(0).array()).matrix();
  CHECK(code_of([&] { cf_estimate(ds, RegressorSpec::identity(1), oracle(ds.n(), lin)); }) ==
        ErrorCode::CollinearControlFunction);
}

TEST_CASE("outcome scaling and moment conditions") {
  SimConfig cfg;
  cfg.n = 800;
  cfg.d = 2;
  const auto draw = gen_dataset(cfg, 0);
  const Dataset& ds = draw.data;
  const Dataset scaled = ds.with_outcome(3.0 * ds.y());
  const auto spec = RegressorSpec::identity(2);
  const auto fs = fit_nw(ds);

  std::vector<std::pair<IVEstimate, IVEstimate>> pairs;
  pairs.emplace_back(live_estimate(ds, spec), live_estimate(scaled, spec));
  pairs.emplace_back(ir_estimate(ds, spec, fs), ir_estimate(scaled, spec, fs));
  pairs.emplace_back(cf_estimate(ds, spec, fs), cf_estimate(scaled, spec, fs));
  pairs.emplace_back(psr_estimate(ds), psr_estimate(scaled));
  pairs.emplace_back(dml_estimate(ds, NwLearner{}), dml_estimate(scaled, NwLearner{}));
  for (const auto& [a, b] : pairs) {
    CHECK(moment_violation(a, ds.y()) < 1e-8);
    for (Eigen::Index k = 0; k < a.beta.size(); ++k) {
      // DML refits E[y|c] on the scaled outcome, so its m_y coefficient is unchanged
      if (a.kind == EstimatorKind::Dml && a.labels[static_cast<std::size_t>(k)] == "m_y") {
        CHECK(b.beta[k] == doctest::Approx(a.beta[k]).epsilon(1e-10));
      } else {
        CHECK(b.beta[k] == doctest::Approx(3.0 * a.beta[k]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("PSR with a correctly specified probit") {
  SimConfig cfg;
  cfg.psi = 0.0;
  cfg.n = 8000;
  const auto rows = run_monte_carlo(cfg, {SimEstimator::Psr}, 100);
  const auto s = summarize(rows);
  CHECK(s[0].errors == 0);
  CHECK(std::fabs(s[0].median) < 0.04);
}

TEST_CASE("PSR with a constant instrument") {
  MatrixXd C(20, 1);
  for (int i = 0; i < 20; ++i) C(i, 0) = i;
  VectorXd t = VectorXd::Zero(20);
  t.head(10).setOnes();
  const Dataset ds = make_dataset(VectorXd::LinSpaced(20, 0, 1), t, VectorXd::Ones(20), C);
  CHECK(code_of([&] { psr_estimate(ds); }) == ErrorCode::Separation);
}

TEST_CASE("DML without cross-fitting is IR on generated regressors") {
  SimConfig cfg;
  cfg.n = 1000;
  const Dataset ds = gen_dataset(cfg, 5).data;
  const auto est = dml_estimate(ds, NwLearner{});
  const auto fz = nw_regression(ds.C(), ds.z());
  const auto fy = nw_regression(ds.C(), ds.y());
  const auto ft = nw_regression(ds.C(), ds.t());
  MatrixXd R(ds.n(), 3);
  R << VectorXd::Ones(static_cast<Eigen::Index>(ds.n())), fy.fitted, ft.fitted;
  const auto ir = ir_estimate(ds, R, fz);
  CHECK(est.beta == ir.beta);
}

TEST_CASE("DML with the true nuisances") {
  SimConfig cfg;
  cfg.n = 8000;
  const auto s = summarize(run_monte_carlo(cfg, {SimEstimator::OracleDml}, 100));
  CHECK(std::fabs(s[0].median) < 0.03);
}

TEST_CASE("fold assignment keeps clusters together") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 300;
    std::vector<long long> cl(n);
    for (auto& c : cl) c = static_cast<long long>(rng.below(40));
    const Dataset ds = make_dataset(VectorXd::Zero(n), VectorXd::Zero(n), VectorXd::Zero(n),
                                    MatrixXd::Zero(n, 1), cl);
    const auto folds = assign_folds(ds, 5, static_cast<std::uint64_t>(trial));
    std::map<int, int> fold_of;
    std::set<int> used;
    for (int i = 0; i < n; ++i) {
      const int g = ds.cluster()[static_cast<std::size_t>(i)];
      const int f = folds[static_cast<std::size_t>(i)];
      CHECK(f >= 0);
      CHECK(f < 5);
      used.insert(f);
      auto [it, fresh] = fold_of.emplace(g, f);
      if (!fresh) CHECK(it->second == f);
    }
    CHECK(used.size() == 5);
  }
}

TEST_CASE("cross-fit aggregates by the median over splits") {
  SimConfig cfg;
  cfg.n = 400;
  const Dataset ds = gen_dataset(cfg, 8).data;
  // a small network predicts anywhere; held-out tail points can fall outside
  // the kernel support of the training folds
  MlpConfig small;
  small.hidden_units = 10;
  small.max_epochs = 20;
  const MlpLearner learner(small);
  const auto est = dml_estimate(ds, learner, CrossFitPlan{5, 7, 123});
  REQUIRE(est.split_alphas.size() == 7);
  CHECK(est.alpha() == median(est.split_alphas));
  CHECK(est.split_alphas.front() != est.split_alphas.back());
  const auto again = dml_estimate(ds, learner, CrossFitPlan{5, 7, 123});
  CHECK(again.split_alphas == est.split_alphas);

  const Dataset tiny = gen_dataset([] {
    SimConfig c;
    c.n = 12;
    return c;
  }(), 0).data;
  CHECK(code_of([&] { dml_estimate(tiny, NwLearner{}, CrossFitPlan{5, 2, 1}); }) == ErrorCode::FoldTooSmall);
}

TEST_CASE("covariates in r sharpen the instrument-residual estimator") {
  SimConfig cfg;
  cfg.n = 8000;
  std::vector<double> with_r, without_r;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const auto draw = gen_dataset(cfg, rep);
    const auto fs = oracle(draw.data.n(), draw.zeta);
    with_r.push_back(ir_estimate(draw.data, RegressorSpec::identity(1), fs).alpha());
    without_r.push_back(ir_estimate(draw.data, RegressorSpec{true, {}}, fs).alpha());
  }
  CHECK(std::fabs(median(with_r)) < 0.04);
  CHECK(std::fabs(median(without_r)) < 0.04);
  CHECK(iqr(with_r) <= iqr(without_r));
}

}  // TEST_SUITE
