#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "richiv/estimators.hpp"

namespace richiv {

enum class VarianceMethod { CorrectedIR, CorrectedCF, NaiveHC0, ClusterRobust };
const char* variance_method_name(VarianceMethod method);

struct VarianceEstimate {
  VarianceMethod method = VarianceMethod::NaiveHC0;
  MatrixXd covariance;  // of beta-hat, i.e. asymptotic variance / n
  VectorXd se;
  VectorXd residual_smooth;  // NW fit of E[residual | c] (corrected methods)
  std::vector<std::string> warnings;
};

struct CorrectionOptions {
  // Diagnostic switch: treat E[residual | c] as identically zero.
  bool zero_residual_smooth = false;
};

// Per-observation influence terms tau_i = q_i * e_i + phi_i for the
// instrument-residual estimator, given the smoothed residuals m_i.
MatrixXd ir_scores(const IVEstimate& est, const VectorXd& residual_smooth);
// Same for the control-function estimator.
MatrixXd cf_scores(const IVEstimate& est, const VectorXd& residual_smooth);

// Sandwich G^-1 Omega G^-T / n with G = Q'X/n and Omega = tau'tau/n, where
// tau includes the first-step correction. E[e | c] is estimated by NW on the
// same smoother as the first step.
VarianceEstimate ir_variance(const IVEstimate& est, const Smoother& smoother, const Dataset& ds,
                             const CorrectionOptions& opts = {});
VarianceEstimate cf_variance(const IVEstimate& est, const Smoother& smoother, const Dataset& ds,
                             const CorrectionOptions& opts = {});

// HC0 sandwich (Q'X)^-1 (sum q q' e^2) (X'Q)^-1, or CR0 when cluster ids are
// given (scores summed within cluster before the outer product).
VarianceEstimate naive_iv_variance(const IVEstimate& est,
                                   std::optional<std::span<const int>> cluster = std::nullopt);

}  // namespace richiv
