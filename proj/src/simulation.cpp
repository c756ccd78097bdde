#include "richiv/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "richiv/error.hpp"
#include "richiv/inference.hpp"
#include "richiv/normal.hpp"
#include "richiv/random.hpp"

namespace richiv {

void SimConfig::validate() const {
  if (d < 1) throw Error(ErrorCode::InvalidConfig, "d must be >= 1");
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "n must be >= 1");
  if (!(kappa_at > 0.0 && kappa_at < 1.0) || !(kappa_nt > 0.0 && kappa_nt < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "kappa_at and kappa_nt must lie in (0, 1)");
  }
  if (kappa_at + kappa_nt > 1.0) {
    throw Error(ErrorCode::InvalidConfig, "kappa_at + kappa_nt must not exceed 1");
  }
  for (double v : {psi, alpha_nt, alpha_c, alpha_at}) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidConfig, "simulation parameters must be finite");
  }
}

VectorXd c_tilde_of(const MatrixXd& C) {
  return C.rowwise().sum() / std::sqrt(static_cast<double>(C.cols()));
}

namespace {

double zeta_at(const SimConfig& cfg, double ct) {
  return norm_cdf((1.0 - cfg.psi) * ct + cfg.psi * ct * ct - cfg.psi);
}

}  // namespace

SimDraw gen_dataset(const SimConfig& cfg, std::uint64_t rep) {
  cfg.validate();
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  Rng rng(derive_seed(cfg.seed, rep));

  MatrixXd C(n, d);
  VectorXd y(n), t(n), z(n), zeta(n), ct(n);
  SimDraw draw{make_dataset(VectorXd::Zero(1), VectorXd::Zero(1), VectorXd::Zero(1), MatrixXd::Zero(1, 1)),
               {}, {}, {}, {}, {}};
  draw.t0.resize(cfg.n);
  draw.t1.resize(cfg.n);
  draw.types.resize(cfg.n);
  const double sqrt_d = std::sqrt(static_cast<double>(d));

  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Eigen::Index q = 0; q < d; ++q) {
      C(i, q) = rng.normal();
      sum += C(i, q);
    }
    ct[i] = sum / sqrt_d;
    zeta[i] = zeta_at(cfg, ct[i]);
    const double uz = rng.uniform();
    const double u = rng.normal();
    const double eta = rng.normal();

    z[i] = uz < zeta[i] ? 1.0 : 0.0;
    const double s = norm_cdf((ct[i] + u) / std::numbers::sqrt2);
    const int t0 = s < cfg.kappa_at ? 1 : 0;
    const int t1 = s < 1.0 - cfg.kappa_nt ? 1 : 0;
    const auto type = complier_type(t0, t1);
    t[i] = z[i] == 1.0 ? t1 : t0;
    const double alpha = type == ComplierType::NeverTaker ? cfg.alpha_nt
                         : type == ComplierType::Complier ? cfg.alpha_c
                                                          : cfg.alpha_at;
    y[i] = std::exp(1.0 + alpha * t[i] + ct[i] - 0.2 * ct[i] * ct[i]) + eta;
    draw.t0[static_cast<std::size_t>(i)] = t0;
    draw.t1[static_cast<std::size_t>(i)] = t1;
    draw.types[static_cast<std::size_t>(i)] = type;
  }
  draw.data = make_dataset(std::move(y), std::move(t), std::move(z), std::move(C));
  draw.zeta = std::move(zeta);
  draw.c_tilde = std::move(ct);
  return draw;
}

TrueNuisances true_nuisances(const SimConfig& cfg, const MatrixXd& C) {
  const VectorXd ct = c_tilde_of(C);
  const double at_cut = std::numbers::sqrt2 * norm_quantile(cfg.kappa_at);
  const double taker_cut = std::numbers::sqrt2 * norm_quantile(1.0 - cfg.kappa_nt);
  TrueNuisances out;
  out.instrument.resize(ct.size());
  out.outcome.resize(ct.size());
  out.treatment.resize(ct.size());
  for (Eigen::Index i = 0; i < ct.size(); ++i) {
    const double c = ct[i];
    const double zeta = zeta_at(cfg, c);
    // t(0) = 1 iff u < at_cut - c~ ; t(1) = 1 iff u < taker_cut - c~
    const double p_at = norm_cdf(at_cut - c);
    const double p_t1 = norm_cdf(taker_cut - c);
    const double p_nt = 1.0 - p_t1;
    const double p_c = p_t1 - p_at;
    const double base = std::exp(1.0 + c - 0.2 * c * c);
    out.instrument[i] = zeta;
    out.treatment[i] = p_at + p_c * zeta;
    // never-takers stay untreated, so alpha_nt never enters E[y|c]
    out.outcome[i] = base * (p_at * std::exp(cfg.alpha_at) + p_nt +
                             p_c * (zeta * std::exp(cfg.alpha_c) + (1.0 - zeta)));
  }
  return out;
}

FunctionLearner oracle_learner(const SimConfig& cfg) {
  return FunctionLearner([cfg](const MatrixXd& C) { return true_nuisances(cfg, C).instrument; },
                         [cfg](const MatrixXd& C) { return true_nuisances(cfg, C).outcome; },
                         [cfg](const MatrixXd& C) { return true_nuisances(cfg, C).treatment; });
}

const char* sim_estimator_name(SimEstimator e) {
  switch (e) {
    case SimEstimator::Live: return "live";
    case SimEstimator::Psr: return "psr";
    case SimEstimator::OracleIr: return "oracle-ir";
    case SimEstimator::OracleCf: return "oracle-cf";
    case SimEstimator::NwIr: return "nw-ir";
    case SimEstimator::NwCf: return "nw-cf";
    case SimEstimator::NnIr: return "nn-ir";
    case SimEstimator::NnCf: return "nn-cf";
    case SimEstimator::Dml: return "dml";
    case SimEstimator::OracleDml: return "oracle-dml";
  }
  return "unknown";
}

std::vector<SimEstimator> all_sim_estimators() {
  return {SimEstimator::Live, SimEstimator::Psr,  SimEstimator::OracleIr, SimEstimator::OracleCf,
          SimEstimator::NwIr, SimEstimator::NwCf, SimEstimator::NnIr,     SimEstimator::NnCf,
          SimEstimator::Dml,  SimEstimator::OracleDml};
}

std::optional<SimEstimator> parse_sim_estimator(std::string_view name) {
  for (auto e : all_sim_estimators()) {
    if (name == sim_estimator_name(e)) return e;
  }
  return std::nullopt;
}

namespace {

// First-step fits shared by the estimators of one replication.
class RepContext {
 public:
  RepContext(const SimConfig& cfg, const SimDraw& draw, const SimOptions& opts, std::uint64_t rep_seed)
      : cfg_(cfg), draw_(draw), opts_(opts), rep_seed_(rep_seed),
        spec_(RegressorSpec::identity(cfg.d)) {}

  const RegressorSpec& spec() const { return spec_; }

  const FirstStepFit& oracle_fit() {
    if (!oracle_) oracle_ = oracle(draw_.data.n(), draw_.zeta);
    return *oracle_;
  }
  const Smoother& oracle_smoother() {
    if (!smoother_) smoother_ = default_smoother(draw_.data.C(), opts_.nw.order, opts_.nw.rule);
    return *smoother_;
  }
  const FirstStepFit& nw_fit() { return cached(nw_, [&] { return fit_nw(draw_.data, opts_.nw); }); }
  const FirstStepFit& nn_fit() {
    return cached(nn_, [&] { return fit_mlp(draw_.data, opts_.mlp, derive_seed(rep_seed_, 1)); });
  }
  std::uint64_t dml_seed() const { return derive_seed(rep_seed_, 2); }

 private:
  // Failed fits are cached too, so estimators sharing a fit report the same error.
  template <class F>
  const FirstStepFit& cached(std::optional<FirstStepFit>& slot, F make) {
    if (!slot) {
      if (failure_for(&slot)) throw *failure_for(&slot);
      try {
        slot = make();
      } catch (const Error& e) {
        failures_.emplace_back(&slot, e);
        throw;
      }
    }
    return *slot;
  }
  const Error* failure_for(const void* slot) const {
    for (const auto& [s, e] : failures_) {
      if (s == slot) return &e;
    }
    return nullptr;
  }

  const SimConfig& cfg_;
  const SimDraw& draw_;
  const SimOptions& opts_;
  std::uint64_t rep_seed_;
  RegressorSpec spec_;
  std::optional<FirstStepFit> oracle_, nw_, nn_;
  std::optional<Smoother> smoother_;
  std::vector<std::pair<const void*, Error>> failures_;
};

RepResult run_one(SimEstimator e, RepContext& ctx, const SimDraw& draw, const SimConfig& cfg,
                  const SimOptions& opts) {
  const Dataset& ds = draw.data;
  RepResult r;
  r.estimator = e;
  r.se = std::numeric_limits<double>::quiet_NaN();
  auto naive_se = [&](const IVEstimate& est) { return naive_iv_variance(est).se[0]; };
  IVEstimate est;
  switch (e) {
    case SimEstimator::Live:
      est = live_estimate(ds, ctx.spec());
      if (opts.compute_se) r.se = naive_se(est);
      break;
    case SimEstimator::Psr:
      est = psr_estimate(ds);
      if (opts.compute_se) r.se = naive_se(est);
      break;
    case SimEstimator::OracleIr:
      est = ir_estimate(ds, ctx.spec(), ctx.oracle_fit());
      if (opts.compute_se) r.se = ir_variance(est, ctx.oracle_smoother(), ds).se[0];
      break;
    case SimEstimator::OracleCf:
      est = cf_estimate(ds, ctx.spec(), ctx.oracle_fit());
      if (opts.compute_se) r.se = cf_variance(est, ctx.oracle_smoother(), ds).se[0];
      break;
    case SimEstimator::NwIr: {
      const auto& fs = ctx.nw_fit();
      est = ir_estimate(ds, ctx.spec(), fs);
      if (opts.compute_se) r.se = ir_variance(est, *fs.smoother, ds).se[0];
      break;
    }
    case SimEstimator::NwCf: {
      const auto& fs = ctx.nw_fit();
      est = cf_estimate(ds, ctx.spec(), fs);
      if (opts.compute_se) r.se = cf_variance(est, *fs.smoother, ds).se[0];
      break;
    }
    case SimEstimator::NnIr:
      est = ir_estimate(ds, ctx.spec(), ctx.nn_fit());
      if (opts.compute_se) r.se = ir_variance(est, ctx.oracle_smoother(), ds).se[0];
      break;
    case SimEstimator::NnCf:
      est = cf_estimate(ds, ctx.spec(), ctx.nn_fit());
      if (opts.compute_se) r.se = cf_variance(est, ctx.oracle_smoother(), ds).se[0];
      break;
    case SimEstimator::Dml:
      est = dml_estimate(ds, MlpLearner(opts.mlp), std::nullopt, ctx.dml_seed());
      if (opts.compute_se) r.se = naive_se(est);
      break;
    case SimEstimator::OracleDml:
      est = dml_estimate(ds, oracle_learner(cfg), std::nullopt, ctx.dml_seed());
      if (opts.compute_se) r.se = naive_se(est);
      break;
  }
  r.alpha = est.alpha();
  r.status = "ok";
  return r;
}

std::vector<RepResult> run_rep(const SimConfig& cfg, const std::vector<SimEstimator>& roster,
                               std::uint64_t rep, const SimOptions& opts) {
  const SimDraw draw = gen_dataset(cfg, rep);
  RepContext ctx(cfg, draw, opts, derive_seed(cfg.seed, rep));
  std::vector<RepResult> out;
  out.reserve(roster.size());
  for (auto e : roster) {
    RepResult r;
    try {
      r = run_one(e, ctx, draw, cfg, opts);
    } catch (const Error& err) {
      r = RepResult{};
      r.estimator = e;
      r.alpha = std::numeric_limits<double>::quiet_NaN();
      r.se = std::numeric_limits<double>::quiet_NaN();
      r.status = std::string(error_code_name(err.code()));
    }
    r.rep = rep;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<RepResult> run_monte_carlo(const SimConfig& cfg, const std::vector<SimEstimator>& roster,
                                       std::size_t reps, const SimOptions& opts) {
  cfg.validate();
  if (roster.empty()) throw Error(ErrorCode::InvalidConfig, "estimator roster is empty");
  std::vector<std::vector<RepResult>> per_rep(reps);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t rep = next++; rep < reps; rep = next++) {
      per_rep[rep] = run_rep(cfg, roster, rep, opts);
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(std::max<std::size_t>(reps, 1))));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
  }
  std::vector<RepResult> out;
  out.reserve(reps * roster.size());
  for (auto& rows : per_rep) {
    for (auto& r : rows) out.push_back(std::move(r));
  }
  return out;
}

double quantile_type7(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::AllFailed, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<SummaryRow> summarize(const std::vector<RepResult>& results) {
  std::vector<SimEstimator> order;
  for (const auto& r : results) {
    if (std::find(order.begin(), order.end(), r.estimator) == order.end()) order.push_back(r.estimator);
  }
  std::vector<SummaryRow> rows;
  for (auto e : order) {
    std::vector<double> values;
    SummaryRow row;
    row.estimator = e;
    for (const auto& r : results) {
      if (r.estimator != e) continue;
      ++row.reps;
      if (r.ok()) {
        values.push_back(r.alpha);
      } else {
        ++row.errors;
      }
    }
    if (values.empty()) {
      throw Error(ErrorCode::AllFailed,
                  std::string("every replication failed for estimator ") + sim_estimator_name(e),
                  sim_estimator_name(e));
    }
    std::sort(values.begin(), values.end());
    row.median = quantile_type7(values, 0.5);
    row.iqr = quantile_type7(values, 0.75) - quantile_type7(values, 0.25);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace richiv
