#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "richiv/data.hpp"
#include "richiv/estimators.hpp"
#include "richiv/firststep.hpp"

namespace richiv {

// Simulation design: d standard-normal covariates entering only through
// c~ = sum_q c_q / sqrt(d), instrument propensity Phi((1-psi) c~ + psi c~^2 - psi),
// latent take-up s = Phi((c~ + u)/sqrt(2)) and outcome
// y = exp(1 + alpha_i t + c~ - 0.2 c~^2) + eta.
struct SimConfig {
  std::size_t d = 1;
  std::size_t n = 500;
  double psi = 1.0;
  double kappa_at = 0.25;
  double kappa_nt = 0.25;
  double alpha_nt = -1.0;
  double alpha_c = 0.0;
  double alpha_at = 1.0;
  std::uint64_t seed = 20240601;

  void validate() const;
};

struct SimDraw {
  Dataset data;
  VectorXd zeta;     // true E[z | c]
  VectorXd c_tilde;
  std::vector<int> t0, t1;
  std::vector<ComplierType> types;
};

// Deterministic in (cfg.seed, rep): replication `rep` draws from its own
// substream derive_seed(cfg.seed, rep).
SimDraw gen_dataset(const SimConfig& cfg, std::uint64_t rep);

VectorXd c_tilde_of(const MatrixXd& C);

// Closed-form E[z|c], E[y|c], E[t|c] under the design.
struct TrueNuisances {
  VectorXd instrument;
  VectorXd outcome;
  VectorXd treatment;
};
TrueNuisances true_nuisances(const SimConfig& cfg, const MatrixXd& C);
FunctionLearner oracle_learner(const SimConfig& cfg);

enum class SimEstimator { Live, Psr, OracleIr, OracleCf, NwIr, NwCf, NnIr, NnCf, Dml, OracleDml };
const char* sim_estimator_name(SimEstimator e);
std::optional<SimEstimator> parse_sim_estimator(std::string_view name);
std::vector<SimEstimator> all_sim_estimators();

struct SimOptions {
  NwOptions nw;
  MlpConfig mlp;
  // Also compute a standard error per replication: corrected sandwich for the
  // IR/CF variants, HC0 for the rest.
  bool compute_se = false;
  unsigned threads = 1;
};

struct RepResult {
  std::uint64_t rep = 0;
  SimEstimator estimator = SimEstimator::Live;
  double alpha = 0.0;
  double se = 0.0;       // NaN unless SimOptions::compute_se
  std::string status;    // "ok" or an error code name
  bool ok() const { return status == "ok"; }
};

// One row per (rep, estimator), ordered by rep then roster order. Estimator
// failures become error rows; the run itself never aborts on them.
std::vector<RepResult> run_monte_carlo(const SimConfig& cfg, const std::vector<SimEstimator>& roster,
                                       std::size_t reps, const SimOptions& opts = {});

struct SummaryRow {
  SimEstimator estimator = SimEstimator::Live;
  double median = 0.0;
  double iqr = 0.0;
  std::size_t errors = 0;
  std::size_t reps = 0;
};

// Type-7 sample quantile of already-sorted values.
double quantile_type7(const std::vector<double>& sorted, double p);

// Median and IQR over ok rows per estimator, in order of first appearance.
// Throws AllFailed when an estimator has no ok rows.
std::vector<SummaryRow> summarize(const std::vector<RepResult>& results);

}  // namespace richiv
