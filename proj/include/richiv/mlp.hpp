#pragma once

#include <cstdint>

#include "richiv/data.hpp"
#include "richiv/random.hpp"

namespace richiv {

// Shallow ReLU regression network trained by mini-batch Adam on squared error.
// Defaults follow the usual scikit-learn MLPRegressor settings.
struct MlpConfig {
  int hidden_units = 100;
  double l2_alpha = 1e-4;  // divided by n before use
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 200;  // effective size is min(batch_size, n)
  int max_epochs = 200;

  void validate() const;
};

// out = w2' ReLU(W1 x + b1) + b2. Parameters are stored flat as
// [W1 (column-major, hidden x inputs), b1, w2, b2].
class Mlp {
 public:
  // Glorot-uniform weights, zero biases.
  Mlp(std::size_t inputs, int hidden, Rng& rng);

  std::size_t inputs() const { return inputs_; }
  int hidden() const { return hidden_; }
  VectorXd& parameters() { return params_; }
  const VectorXd& parameters() const { return params_; }

  VectorXd predict(const MatrixXd& X) const;

  // mean((f(x) - y)^2) + penalty * (|W1|^2 + |w2|^2). Fills `grad` (resized
  // to the parameter count) when non-null.
  double loss(const MatrixXd& X, const VectorXd& y, double penalty, VectorXd* grad) const;

 private:
  std::size_t inputs_;
  int hidden_;
  VectorXd params_;
};

struct MlpTrainResult {
  Mlp net;
  int epochs = 0;
  double final_loss = 0.0;
};

// Deterministic given (X, y, cfg, seed). Throws NonFiniteLoss on divergence.
MlpTrainResult train_mlp(const MatrixXd& X, const VectorXd& y, const MlpConfig& cfg,
                         std::uint64_t seed);

}  // namespace richiv
