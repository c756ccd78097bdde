#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "richiv/data.hpp"
#include "richiv/firststep.hpp"

namespace richiv {

enum class EstimatorKind { Live, InstrumentResidual, ControlFunction, Psr, Dml };
const char* estimator_kind_name(EstimatorKind kind);

// Result of a just-identified linear IV solve Q'(y - X beta) = 0.
//
// Column layout:
//   Live:  Q = (z, r),         X = (t, r)
//   IR:    Q = (z - zeta, r),  X = (t, r)          (also PSR and DML)
//   CF:    Q = (z, r, zeta),   X = (t, r, zeta)
// so alpha is always beta[0] and r occupies columns 1..r_cols.
struct IVEstimate {
  EstimatorKind kind = EstimatorKind::Live;
  VectorXd beta;
  std::vector<std::string> labels;
  VectorXd residuals;
  MatrixXd Q;
  MatrixXd X;
  Eigen::Index r_cols = 0;
  std::optional<Eigen::Index> phi_index;  // CF: coefficient on zeta
  VectorXd zeta;                          // first-step values used (IR/CF)
  double rcond = 0.0;                     // reciprocal condition number of Q'X
  // Cross-fit DML only: alpha per split (in split order). beta is then the
  // componentwise median across splits and Q/X/residuals are empty.
  std::vector<double> split_alphas;

  double alpha() const { return beta[0]; }
  double phi() const { return beta[*phi_index]; }
};

// Solves Q'X beta = Q'y. Throws SingularMoment when rcond(Q'X) < 1e-12 and
// Overidentified when Q has more columns than X.
IVEstimate live_solve(const MatrixXd& Q, const MatrixXd& X, const VectorXd& y,
                      std::vector<std::string> labels = {});

// Plain LIVE: z instruments t, r is its own instrument.
IVEstimate live_estimate(const Dataset& ds, const RegressorSpec& spec);

// Instrument-residual estimator: instrument z - zeta(c).
IVEstimate ir_estimate(const Dataset& ds, const RegressorSpec& spec, const FirstStepFit& fs);
IVEstimate ir_estimate(const Dataset& ds, const MatrixXd& R, const FirstStepFit& fs,
                       std::vector<std::string> r_labels = {});

// Control-function estimator: zeta(c) added as an exogenous regressor.
// Throws CollinearControlFunction when zeta lies in the span of r.
IVEstimate cf_estimate(const Dataset& ds, const RegressorSpec& spec, const FirstStepFit& fs);
IVEstimate cf_estimate(const Dataset& ds, const MatrixXd& R, const FirstStepFit& fs,
                       std::vector<std::string> r_labels = {});

// Probit propensity residual as the instrument, intercept-only equation.
IVEstimate psr_estimate(const Dataset& ds);

enum class Nuisance { Instrument, Outcome, Treatment };

// Estimates E[v | c] for the DML nuisances.
class NuisanceLearner {
 public:
  virtual ~NuisanceLearner() = default;
  virtual FirstStepFit fit(const MatrixXd& C, const VectorXd& v, Nuisance target,
                           std::uint64_t seed) const = 0;
};

class NwLearner : public NuisanceLearner {
 public:
  explicit NwLearner(NwOptions opts = {}) : opts_(std::move(opts)) {}
  FirstStepFit fit(const MatrixXd& C, const VectorXd& v, Nuisance, std::uint64_t) const override;

 private:
  NwOptions opts_;
};

class MlpLearner : public NuisanceLearner {
 public:
  explicit MlpLearner(MlpConfig cfg = {}) : cfg_(cfg) {}
  FirstStepFit fit(const MatrixXd& C, const VectorXd& v, Nuisance, std::uint64_t seed) const override;

 private:
  MlpConfig cfg_;
};

class CellMeansLearner : public NuisanceLearner {
 public:
  explicit CellMeansLearner(std::vector<std::size_t> key) : key_(std::move(key)) {}
  FirstStepFit fit(const MatrixXd& C, const VectorXd& v, Nuisance, std::uint64_t) const override;

 private:
  std::vector<std::size_t> key_;
};

// Known nuisance functions; ignores the training response.
class FunctionLearner : public NuisanceLearner {
 public:
  FunctionLearner(Predictor instrument, Predictor outcome, Predictor treatment)
      : instrument_(std::move(instrument)), outcome_(std::move(outcome)), treatment_(std::move(treatment)) {}
  FirstStepFit fit(const MatrixXd& C, const VectorXd& v, Nuisance target, std::uint64_t) const override;

 private:
  Predictor instrument_, outcome_, treatment_;
};

struct CrossFitPlan {
  int folds = 5;
  int splits = 100;
  std::uint64_t seed = 0;
};

// Fold index per observation. Whole clusters are assigned together when the
// dataset has cluster ids.
std::vector<int> assign_folds(const Dataset& ds, int folds, std::uint64_t seed);

// Without a plan: IR with r = (1, m_y(c), m_t(c)) from single full-sample fits.
// With a plan: out-of-fold nuisances per split, alpha aggregated by median.
IVEstimate dml_estimate(const Dataset& ds, const NuisanceLearner& learner,
                        const std::optional<CrossFitPlan>& plan = std::nullopt,
                        std::uint64_t seed = 0);

}  // namespace richiv
