#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "richiv/data.hpp"
#include "richiv/kernels.hpp"
#include "richiv/mlp.hpp"

namespace richiv {

enum class FirstStepMethod { NadarayaWatson, Probit, CellMeans, Neural, Oracle };
const char* first_step_name(FirstStepMethod method);

// Maps covariate rows (m x d) to predictions (length m).
using Predictor = std::function<VectorXd(const MatrixXd&)>;

// Kernel and bandwidths of a Nadaraya-Watson smoother. The corrected variance
// estimators reuse the first step's smoother for E[residual | c].
struct Smoother {
  HigherOrderKernel kernel;
  VectorXd bandwidths;
};

Smoother default_smoother(const MatrixXd& C, const KernelOrderPolicy& order = {},
                          const BandwidthRule& rule = {});

struct FirstStepDiagnostics {
  int iterations = 0;
  double final_loss = 0.0;
  std::vector<std::string> flags;
};

// Fitted E[z | c] (or E[v | c] for a generic response) at the training rows.
struct FirstStepFit {
  FirstStepMethod method = FirstStepMethod::Oracle;
  VectorXd fitted;
  Predictor predictor;  // empty for Oracle
  FirstStepDiagnostics diagnostics;
  std::optional<Smoother> smoother;  // set for NadarayaWatson
};

struct NwOptions {
  KernelOrderPolicy order;
  BandwidthRule rule;
  // Diagnostics only: clip fitted values to [eps, 1 - eps].
  std::optional<double> clip_epsilon;
};

// Leave-in NW fit at the training points. Throws DegenerateDenominator with
// the offending rows rather than dropping them.
FirstStepFit fit_nw(const Dataset& ds, const NwOptions& opts = {});
FirstStepFit nw_regression(const MatrixXd& C, const VectorXd& v, const NwOptions& opts = {});

struct ProbitFit {
  VectorXd coefficients;
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0.0;
  double gradient_norm = 0.0;  // max-norm at the solution
};

// Newton-Raphson probit MLE with step-halving. Converged when the gradient
// max-norm drops below 1e-8; at most 100 iterations.
ProbitFit probit_mle(const MatrixXd& X, const VectorXd& z);
std::pair<ProbitFit, FirstStepFit> fit_probit(const Dataset& ds, const RegressorSpec& spec);

// Mean of the response within each cell of the keyed (discrete) columns.
// The predictor throws PredictUnseenCell for cells absent from training.
FirstStepFit fit_cell_means(const Dataset& ds, const std::vector<std::size_t>& key_columns);
FirstStepFit cell_means_regression(const MatrixXd& C, const VectorXd& v,
                                   const std::vector<std::size_t>& key_columns);

FirstStepFit fit_mlp(const Dataset& ds, const MlpConfig& cfg, std::uint64_t seed);
FirstStepFit mlp_regression(const MatrixXd& C, const VectorXd& v, const MlpConfig& cfg,
                            std::uint64_t seed);

// Known values of E[z | c], passed through unchanged.
FirstStepFit oracle(std::size_t n, VectorXd values);

}  // namespace richiv
