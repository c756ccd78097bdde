#include <doctest.h>

#include <cmath>

#include "richiv/error.hpp"
#include "richiv/firststep.hpp"
#include "richiv/mlp.hpp"
#include "richiv/normal.hpp"
#include "richiv/random.hpp"
#include "richiv/simulation.hpp"

using namespace richiv;

namespace {

Dataset with_instrument(const MatrixXd& C, const VectorXd& z) {
  const auto n = C.rows();
  return make_dataset(VectorXd::Zero(n), VectorXd::Zero(n), z, C);
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected richiv::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_SUITE("firststep") {

TEST_CASE("NW with constant instrument") {
  Rng rng(1);
  MatrixXd C(100, 2);
  for (Eigen::Index i = 0; i < C.size(); ++i) C.data()[i] = rng.normal();
  const auto fs = fit_nw(with_instrument(C, VectorXd::Ones(100)));
  CHECK(fs.method == FirstStepMethod::NadarayaWatson);
  CHECK((fs.fitted.array() - 1.0).abs().maxCoeff() < 1e-12);
  REQUIRE(fs.smoother.has_value());
  CHECK(fs.smoother->kernel.order() == 4);
}

TEST_CASE("NW duplicated rows share their fitted value") {
  MatrixXd C(3, 1);
  C << 0, 0, 10;
  VectorXd z(3);
  z << 0, 1, 1;
  const auto fs = fit_nw(with_instrument(C, z));
  CHECK(fs.fitted[0] == 0.5);
  CHECK(fs.fitted[1] == 0.5);
}

TEST_CASE("NW is consistent for a probit-shaped propensity") {
  SimConfig cfg;
  cfg.psi = 0.0;
  cfg.n = 8000;
  double mae = 0.0;
  const int reps = 20;
  for (int rep = 0; rep < reps; ++rep) {
    const auto draw = gen_dataset(cfg, static_cast<std::uint64_t>(rep));
    const auto fs = fit_nw(draw.data);
    const VectorXd truth = draw.c_tilde.unaryExpr([](double c) { return norm_cdf(c); });
    mae += (fs.fitted - truth).cwiseAbs().mean();
  }
  CHECK(mae / reps < 0.05);
}

TEST_CASE("NW surfaces degenerate points") {
  // With the fourth-order kernel and h = 1, six neighbours at distance u with
  // K(0) + 6 K(u) = 0 cancel the centre point's own weight.
  const double u = std::sqrt((6.25 - std::sqrt(6.25 * 6.25 - 4 * 4.375 * 2.1875)) / 8.75);
  const auto k4 = make_epanechnikov(4);
  REQUIRE(std::fabs(k4(0.0) + 6 * k4(u)) < 1e-14);
  MatrixXd C(7, 1);
  C << 0, u, u, u, -u, -u, -u;
  VectorXd z(7);
  z << 1, 0, 1, 0, 1, 0, 1;
  NwOptions opts;
  opts.order.order = 4;
  opts.rule.scale = 1.0;
  opts.rule.exponent = 0.0;
  opts.rule.scale_by_sd = false;
  try {
    fit_nw(with_instrument(C, z), opts);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateDenominator);
    CHECK(e.rows() == std::vector<std::size_t>{0});
  }
}

TEST_CASE("probit intercept only with balanced instrument") {
  MatrixXd C(10, 1);
  VectorXd z(10);
  for (int i = 0; i < 10; ++i) {
    C(i, 0) = i;
    z[i] = i % 2;
  }
  auto [pf, fs] = fit_probit(with_instrument(C, z), RegressorSpec{true, {}});
  CHECK(pf.converged);
  CHECK(std::fabs(pf.coefficients[0]) < 1e-12);
  CHECK((fs.fitted.array() - 0.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("probit separation") {
  MatrixXd C(10, 1);
  for (int i = 0; i < 10; ++i) C(i, 0) = i;
  CHECK(code_of([&] { fit_probit(with_instrument(C, VectorXd::Ones(10)), RegressorSpec::identity(1)); }) ==
        ErrorCode::Separation);
  VectorXd z(10);
  for (int i = 0; i < 10; ++i) z[i] = i >= 5 ? 1.0 : 0.0;
  CHECK(code_of([&] { fit_probit(with_instrument(C, z), RegressorSpec::identity(1)); }) ==
        ErrorCode::Separation);
}

TEST_CASE("probit recovers its coefficients") {
  Rng rng(99);
  const int n = 20000;
  MatrixXd C(n, 1);
  VectorXd z(n);
  for (int i = 0; i < n; ++i) {
    C(i, 0) = rng.normal();
    z[i] = rng.uniform() < norm_cdf(0.5 + 1.2 * C(i, 0)) ? 1.0 : 0.0;
  }
  auto [pf, fs] = fit_probit(with_instrument(C, z), RegressorSpec::identity(1));
  CHECK(pf.converged);
  CHECK(pf.gradient_norm < 1e-8);
  CHECK(std::fabs(pf.coefficients[0] - 0.5) < 0.05);
  CHECK(std::fabs(pf.coefficients[1] - 1.2) < 0.05);
  CHECK(fs.fitted.minCoeff() >= 0.0);
  CHECK(fs.fitted.maxCoeff() <= 1.0);
}

TEST_CASE("probit rejects a rank deficient design") {
  MatrixXd C(6, 1);
  C << 1, 2, 3, 4, 5, 6;
  VectorXd z(6);
  z << 0, 1, 0, 1, 1, 0;
  RegressorSpec spec{true, {Transform::identity(0), Transform::identity(0)}};
  CHECK(code_of([&] { fit_probit(with_instrument(C, z), spec); }) == ErrorCode::RankDeficient);
}

TEST_CASE("cell means") {
  MatrixXd C(10, 1);
  VectorXd z(10);
  C << 0, 0, 0, 0, 0, 1, 1, 1, 1, 1;
  z << 1, 0, 0, 0, 0, 1, 1, 1, 1, 0;
  const auto fs = fit_cell_means(with_instrument(C, z), {0});
  for (int i = 0; i < 5; ++i) CHECK(fs.fitted[i] == doctest::Approx(0.2));
  for (int i = 5; i < 10; ++i) CHECK(fs.fitted[i] == doctest::Approx(0.8));
  CHECK(code_of([&] { fs.predictor(MatrixXd::Constant(1, 1, 2.0)); }) == ErrorCode::PredictUnseenCell);

  MatrixXd D(4, 1);
  D << 1, 2, 3, 4;
  VectorXd w(4);
  w << 0, 1, 1, 0;
  CHECK(fit_cell_means(with_instrument(D, w), {0}).fitted == w);
}

TEST_CASE("cell means match a saturated probit") {
  Rng rng(4);
  const int n = 3000;
  MatrixXd C(n, 1);
  VectorXd z(n);
  const double p[3] = {0.2, 0.55, 0.8};
  for (int i = 0; i < n; ++i) {
    const auto g = rng.below(3);
    C(i, 0) = static_cast<double>(g);
    z[i] = rng.uniform() < p[g] ? 1.0 : 0.0;
  }
  const Dataset ds = with_instrument(C, z);
  RegressorSpec saturated{true, {Transform::indicator(0, 1.0), Transform::indicator(0, 2.0)}};
  const auto probit = fit_probit(ds, saturated).second;
  const auto cells = fit_cell_means(ds, {0});
  CHECK((probit.fitted - cells.fitted).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("network gradient matches central differences") {
  Rng rng(12);
  const int n = 10;
  MatrixXd X(n, 2);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    y[i] = rng.normal();
  }
  Rng init(5);
  Mlp net(2, 3, init);
  for (Eigen::Index k = 0; k < net.parameters().size(); ++k) net.parameters()[k] += 0.1 * init.normal();
  const double penalty = 0.05;
  VectorXd grad;
  net.loss(X, y, penalty, &grad);
  double worst = 0.0;
  const double step = 1e-5;
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    Mlp plus = net, minus = net;
    plus.parameters()[k] += step;
    minus.parameters()[k] -= step;
    const double fd = (plus.loss(X, y, penalty, nullptr) - minus.loss(X, y, penalty, nullptr)) / (2 * step);
    const double scale = std::max({std::fabs(fd), std::fabs(grad[k]), 1e-6});
    worst = std::max(worst, std::fabs(fd - grad[k]) / scale);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("network fits a constant") {
  // 200 epochs at n=500 is only 600 Adam steps, which leaves visible tail
  // slope; n=4000 gives 20 steps per epoch
  Rng rng(8);
  const int n = 4000;
  MatrixXd C(n, 1);
  for (int i = 0; i < n; ++i) C(i, 0) = rng.normal();
  const auto fs = mlp_regression(C, VectorXd::Constant(n, 0.7), MlpConfig{}, 3);
  CHECK((fs.fitted.array() - 0.7).abs().maxCoeff() < 0.02);
}

TEST_CASE("network training is reproducible") {
  Rng rng(6);
  const int n = 300;
  MatrixXd C(n, 2);
  VectorXd z(n);
  for (int i = 0; i < n; ++i) {
    C(i, 0) = rng.normal();
    C(i, 1) = rng.normal();
    z[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  MlpConfig cfg;
  cfg.max_epochs = 20;
  const Dataset ds = with_instrument(C, z);
  CHECK(fit_mlp(ds, cfg, 77).fitted == fit_mlp(ds, cfg, 77).fitted);
  CHECK(fit_mlp(ds, cfg, 77).fitted != fit_mlp(ds, cfg, 78).fitted);

  cfg.max_epochs = 0;
  const auto untrained = fit_mlp(ds, cfg, 77);
  const auto again = train_mlp(C, z, cfg, 77);
  CHECK(untrained.fitted == again.net.predict(C));
  CHECK(again.epochs == 0);
}

TEST_CASE("oracle passthrough") {
  VectorXd v(3);
  v << 0.1, 0.2, 0.3;
  const auto fs = oracle(3, v);
  CHECK(fs.fitted == v);
  CHECK(fs.method == FirstStepMethod::Oracle);
  CHECK(code_of([&] { oracle(4, v); }) == ErrorCode::LengthMismatch);
  v[1] = std::nan("");
  CHECK(code_of([&] { oracle(3, v); }) == ErrorCode::NonFinite);
}

}  // TEST_SUITE
