// Acceptance checks. Prints one PASS/FAIL line per criterion (with indented
// detail lines underneath) and exits non-zero if any criterion fails.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "richiv/cli.hpp"
#include "richiv/error.hpp"
#include "richiv/estimators.hpp"
#include "richiv/kernels.hpp"
#include "richiv/mlp.hpp"
#include "richiv/random.hpp"
#include "richiv/simulation.hpp"

using namespace richiv;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  criterion %d  %s  [%s]\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void info(const char* fmt, auto... args) {
  std::printf("      ");
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

unsigned threads() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Cell {
  double median, iqr;
};

// Reference medians and IQRs for the oracle estimators, keyed by (n, d).
const std::map<std::pair<int, int>, std::pair<Cell, Cell>> kOracleTable = {
    // {CF, IR}
    {{500, 1}, {{-0.00, 0.52}, {0.01, 0.54}}},   {{500, 3}, {{-0.02, 0.50}, {-0.01, 0.49}}},
    {{500, 5}, {{0.02, 0.48}, {0.02, 0.48}}},    {{500, 7}, {{-0.01, 0.50}, {-0.01, 0.51}}},
    {{500, 9}, {{0.00, 0.49}, {-0.00, 0.51}}},   {{2000, 1}, {{0.01, 0.25}, {0.01, 0.25}}},
    {{2000, 3}, {{0.00, 0.27}, {0.00, 0.27}}},   {{2000, 5}, {{-0.01, 0.26}, {-0.01, 0.26}}},
    {{2000, 7}, {{-0.01, 0.25}, {-0.00, 0.25}}}, {{2000, 9}, {{-0.01, 0.25}, {-0.00, 0.26}}},
    {{8000, 1}, {{-0.01, 0.13}, {-0.01, 0.13}}}, {{8000, 3}, {{-0.00, 0.13}, {-0.00, 0.13}}},
    {{8000, 5}, {{0.01, 0.14}, {0.01, 0.14}}},   {{8000, 7}, {{-0.00, 0.13}, {-0.00, 0.13}}},
    {{8000, 9}, {{-0.01, 0.14}, {-0.01, 0.14}}},
};

SimConfig table_config(std::size_t d, std::size_t n) {
  SimConfig cfg;
  cfg.d = d;
  cfg.n = n;
  cfg.psi = 1.0;
  cfg.kappa_at = 0.25;
  cfg.kappa_nt = 0.25;
  cfg.alpha_nt = -1.0;
  cfg.alpha_c = 0.0;
  cfg.alpha_at = 1.0;
  return cfg;
}

std::map<SimEstimator, SummaryRow> run_summary(const SimConfig& cfg, const std::vector<SimEstimator>& roster,
                                               std::size_t reps, bool with_se = false) {
  SimOptions opts;
  opts.threads = threads();
  opts.compute_se = with_se;
  std::map<SimEstimator, SummaryRow> out;
  for (const auto& row : summarize(run_monte_carlo(cfg, roster, reps, opts))) out[row.estimator] = row;
  return out;
}

// ---- 1 --------------------------------------------------------------------

void kernel_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int m : {2, 4, 6, 8, 10}) {
    const auto k = make_epanechnikov(m);
    for (int j = 0; j < m; ++j) {
      auto f = [&](double u) { return std::pow(u, j) * k(u); };
      const double v =
          boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, -1.0, 1.0, 15, 1e-15);
      worst = std::max(worst, std::fabs(v - (j == 0 ? 1.0 : 0.0)));
    }
  }
  const auto k4 = make_epanechnikov(4);
  const bool exact = k4.exact_coeffs() == std::vector<Rational>{{15, 8}, {-35, 8}};
  const double secs = seconds_since(t0);
  char buf[200];
  std::snprintf(buf, sizeof buf, "max moment error %.2e, order-4 = (%s, %s), %.3fs", worst,
                k4.exact_coeffs()[0].str().c_str(), k4.exact_coeffs()[1].str().c_str(), secs);
  verdict(1, "kernel moments and order-4 coefficients", worst < 1e-10 && exact && secs < 1.0, buf);
}

// ---- 2 --------------------------------------------------------------------

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

// Two explicit OLS stages on the model with one dummy per covariate value.
double saturated_2sls(const Dataset& ds) {
  std::map<double, Eigen::Index> cell;
  for (Eigen::Index i = 0; i < ds.C().rows(); ++i) cell.emplace(ds.C()(i, 0), 0);
  Eigen::Index k = 0;
  for (auto& [v, idx] : cell) idx = k++;
  const auto n = ds.C().rows();
  MatrixXd D = MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) D(i, cell[ds.C()(i, 0)]) = 1.0;
  MatrixXd W(n, k + 1);
  W << ds.z(), D;
  const VectorXd that = W * W.colPivHouseholderQr().solve(ds.t());
  MatrixXd V(n, k + 1);
  V << that, D;
  return V.colPivHouseholderQr().solve(ds.y())[0];
}

void saturated_equivalence() {
  const auto t0 = Clock::now();
  const Dataset ds = discrete_dataset(2000, 2024);
  const auto cells = fit_cell_means(ds, {0});
  const auto spec = RegressorSpec::identity(1);
  const double ir = ir_estimate(ds, spec, cells).alpha();
  const double cf = cf_estimate(ds, spec, cells).alpha();
  const double tsls = saturated_2sls(ds);
  const double gap = std::max({std::fabs(ir - cf), std::fabs(ir - tsls), std::fabs(cf - tsls)});
  const double secs = seconds_since(t0);
  char buf[200];
  std::snprintf(buf, sizeof buf, "IR %.12f CF %.12f 2SLS %.12f, max gap %.2e, %.3fs", ir, cf, tsls, gap, secs);
  verdict(2, "saturated IR = CF = 2SLS", gap < 1e-8 && secs < 5.0, buf);
}

// ---- 3 --------------------------------------------------------------------

void oracle_columns() {
  const auto t0 = Clock::now();
  bool pass = true;
  int bad = 0;
  for (int n : {500, 2000, 8000}) {
    for (int d : {1, 3, 5, 7, 9}) {
      const auto s = run_summary(table_config(d, n), {SimEstimator::OracleIr, SimEstimator::OracleCf}, 500);
      const auto& [cf_ref, ir_ref] = kOracleTable.at({n, d});
      for (auto [tag, ref] : {std::pair{SimEstimator::OracleIr, ir_ref}, std::pair{SimEstimator::OracleCf, cf_ref}}) {
        const auto& row = s.at(tag);
        const bool ok = std::fabs(row.median - ref.median) <= 0.05 && std::fabs(row.iqr - ref.iqr) <= 0.10 &&
                        std::fabs(row.median) <= 0.05 && row.errors == 0;
        pass &= ok;
        bad += !ok;
        info("n=%-5d d=%d %-9s median %+.3f (table %+.2f)  iqr %.3f (table %.2f)  errors %zu  %s", n, d,
             sim_estimator_name(tag), row.median, ref.median, row.iqr, ref.iqr, row.errors, ok ? "ok" : "off");
      }
    }
  }
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d of 30 cells outside tolerance, %.1fs", bad, secs);
  verdict(3, "oracle IR/CF columns, 500 reps", pass && secs < 1800.0, buf);
}

// ---- 4 --------------------------------------------------------------------

void live_psr_bias() {
  const auto t0 = Clock::now();
  const auto s = run_summary(table_config(1, 2000), {SimEstimator::Live, SimEstimator::Psr}, 500);
  const auto& live = s.at(SimEstimator::Live);
  const auto& psr = s.at(SimEstimator::Psr);
  const bool live_ok = std::fabs(live.median - 0.89) <= 0.05;
  const bool psr_ok = std::fabs(psr.median - 0.18) <= 0.05;
  const double secs = seconds_since(t0);
  info("live median %+.3f (table 0.89)  iqr %.3f  %s", live.median, live.iqr, live_ok ? "ok" : "off");
  info("psr  median %+.3f (table 0.18)  iqr %.3f  errors %zu  %s", psr.median, psr.iqr, psr.errors,
       psr_ok ? "ok" : "off");
  char buf[160];
  std::snprintf(buf, sizeof buf, "live %.3f, psr %.3f, %.1fs", live.median, psr.median, secs);
  verdict(4, "LIVE and PSR medians at d=1, n=2000", live_ok && psr_ok && secs < 300.0, buf);
}

// ---- 5 --------------------------------------------------------------------

void nw_columns() {
  const auto t0 = Clock::now();
  // {CF, IR}
  const std::map<int, std::pair<Cell, Cell>> table = {{500, {{-0.01, 0.53}, {0.03, 0.53}}},
                                                      {2000, {{-0.00, 0.25}, {0.01, 0.25}}}};
  bool pass = true;
  for (int n : {500, 2000}) {
    const auto s = run_summary(table_config(1, n), {SimEstimator::NwIr, SimEstimator::NwCf}, 500);
    const auto& [cf_ref, ir_ref] = table.at(n);
    for (auto [tag, ref] : {std::pair{SimEstimator::NwIr, ir_ref}, std::pair{SimEstimator::NwCf, cf_ref}}) {
      const auto& row = s.at(tag);
      const bool ok = std::fabs(row.median - ref.median) <= 0.06 && std::fabs(row.iqr - ref.iqr) <= 0.10;
      pass &= ok;
      info("n=%-5d d=1 %-6s median %+.3f (table %+.2f)  iqr %.3f (table %.2f)  errors %zu  %s", n,
           sim_estimator_name(tag), row.median, ref.median, row.iqr, ref.iqr, row.errors, ok ? "ok" : "off");
    }
  }
  // higher dimensions: reported, not gated beyond completing
  for (int d : {5, 7, 9}) {
    try {
      const auto s = run_summary(table_config(d, 500), {SimEstimator::NwIr, SimEstimator::NwCf}, 100);
      for (auto tag : {SimEstimator::NwIr, SimEstimator::NwCf}) {
        const auto& row = s.at(tag);
        info("n=500   d=%d %-6s median %+.3f  iqr %.3f  errors %zu  (not gated)", d, sim_estimator_name(tag),
             row.median, row.iqr, row.errors);
      }
    } catch (const Error& e) {
      pass = false;
      info("n=500   d=%d run failed: %s", d, e.what());
    }
  }
  const double secs = seconds_since(t0);
  char buf[80];
  std::snprintf(buf, sizeof buf, "%.1fs", secs);
  verdict(5, "NW IR/CF columns at d=1", pass && secs < 900.0, buf);
}

// ---- 6 --------------------------------------------------------------------

void mlp_sanity() {
  Rng rng(12);
  MatrixXd X(10, 2);
  VectorXd y(10);
  for (int i = 0; i < 10; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    y[i] = rng.normal();
  }
  Rng init(3);
  Mlp net(2, 3, init);
  for (Eigen::Index k = 0; k < net.parameters().size(); ++k) net.parameters()[k] += 0.1 * init.normal();
  VectorXd grad;
  net.loss(X, y, 0.01, &grad);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    Mlp plus = net, minus = net;
    plus.parameters()[k] += 1e-5;
    minus.parameters()[k] -= 1e-5;
    const double fd = (plus.loss(X, y, 0.01, nullptr) - minus.loss(X, y, 0.01, nullptr)) / 2e-5;
    worst = std::max(worst, std::fabs(fd - grad[k]) / std::max({std::fabs(fd), std::fabs(grad[k]), 1e-6}));
  }

  MatrixXd C(4000, 1);
  for (int i = 0; i < 4000; ++i) C(i, 0) = rng.normal();
  const VectorXd target = VectorXd::Constant(4000, 0.7);
  const auto fit = mlp_regression(C, target, MlpConfig{}, 1);
  const double const_err = (fit.fitted.array() - 0.7).abs().maxCoeff();
  const bool same = mlp_regression(C, target, MlpConfig{}, 1).fitted == fit.fitted;

  char buf[160];
  std::snprintf(buf, sizeof buf, "gradient rel err %.2e, constant fit err %.4f, refit identical %s", worst,
                const_err, same ? "yes" : "no");
  verdict(6, "network gradient, constant fit, determinism", worst < 1e-4 && const_err < 0.02 && same, buf);
}

// ---- 7 --------------------------------------------------------------------

void coverage() {
  const auto t0 = Clock::now();
  SimOptions opts;
  opts.threads = threads();
  opts.compute_se = true;
  const auto rows =
      run_monte_carlo(table_config(1, 2000), {SimEstimator::OracleIr, SimEstimator::OracleCf}, 500, opts);
  std::map<SimEstimator, std::pair<int, int>> hits;
  for (const auto& r : rows) {
    if (!r.ok() || !std::isfinite(r.se)) continue;
    auto& [covered, total] = hits[r.estimator];
    covered += std::fabs(r.alpha - 0.0) <= 1.959963984540054 * r.se;
    ++total;
  }
  bool pass = true;
  std::string detail;
  for (auto tag : {SimEstimator::OracleIr, SimEstimator::OracleCf}) {
    const auto [covered, total] = hits[tag];
    const double rate = total ? static_cast<double>(covered) / total : 0.0;
    pass &= total == 500 && rate >= 0.90 && rate <= 0.98;
    char buf[80];
    std::snprintf(buf, sizeof buf, "%s %.3f (%d/%d) ", sim_estimator_name(tag), rate, covered, total);
    detail += buf;
  }
  const double secs = seconds_since(t0);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.1fs", secs);
  verdict(7, "95% interval coverage, corrected variance", pass && secs < 600.0, detail + buf);
}

// ---- 8 --------------------------------------------------------------------

double median_gap(std::size_t n) {
  SimOptions opts;
  opts.threads = threads();
  const auto rows = run_monte_carlo(table_config(1, n), {SimEstimator::OracleIr, SimEstimator::OracleCf}, 200, opts);
  std::vector<double> gaps;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    if (rows[i].ok() && rows[i + 1].ok()) gaps.push_back(std::fabs(rows[i].alpha - rows[i + 1].alpha));
  }
  std::sort(gaps.begin(), gaps.end());
  return quantile_type7(gaps, 0.5);
}

void estimand_trend() {
  const double small = median_gap(500), large = median_gap(8000);
  char buf[120];
  std::snprintf(buf, sizeof buf, "median |IR-CF| n=500 %.4f, n=8000 %.4f", small, large);
  verdict(8, "IR and CF estimates converge together", large < small, buf);
}

// ---- 9 --------------------------------------------------------------------

std::string simulate_output(const std::vector<std::string>& extra) {
  std::vector<std::string> args{"richiv", "simulate", "--n", "500", "--reps", "40", "--seed", "7"};
  args.insert(args.end(), extra.begin(), extra.end());
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return code == 0 ? out.str() : "exit " + std::to_string(code) + ": " + err.str();
}

void determinism() {
  const std::string a = simulate_output({"--threads", "1"});
  const std::string b = simulate_output({"--threads", "1"});
  const std::string c = simulate_output({"--threads", "3"});
  const std::string fmt_a = simulate_output({"--format", "json"});
  const std::string fmt_b = simulate_output({"--format", "json", "--threads", "2"});
  const bool pass = a == b && a == c && fmt_a == fmt_b && a.rfind("estimator", 0) == 0;
  verdict(9, "simulate output byte-identical under a fixed seed", pass,
          std::to_string(a.size()) + " bytes TSV, " + std::to_string(fmt_a.size()) + " bytes JSON");
}

}  // namespace

int main() {
  std::printf("acceptance run, %u worker thread(s)\n", threads());
  kernel_correctness();
  saturated_equivalence();
  mlp_sanity();
  determinism();
  estimand_trend();
  live_psr_bias();
  coverage();
  nw_columns();
  oracle_columns();
  std::printf("%d criterion failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
