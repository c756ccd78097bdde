#include "richiv/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "richiv/error.hpp"

namespace richiv {

void MlpConfig::validate() const {
  if (hidden_units < 1) throw Error(ErrorCode::InvalidConfig, "hidden_units must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be > 0");
  if (!(l2_alpha >= 0.0)) throw Error(ErrorCode::InvalidConfig, "l2_alpha must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (max_epochs < 0) throw Error(ErrorCode::InvalidConfig, "max_epochs must be >= 0");
}

Mlp::Mlp(std::size_t inputs, int hidden, Rng& rng) : inputs_(inputs), hidden_(hidden) {
  const auto d = static_cast<Eigen::Index>(inputs);
  const Eigen::Index h = hidden;
  params_ = VectorXd::Zero(h * d + h + h + 1);
  const double bound1 = std::sqrt(6.0 / static_cast<double>(d + h));
  const double bound2 = std::sqrt(6.0 / static_cast<double>(h + 1));
  for (Eigen::Index k = 0; k < h * d; ++k) params_[k] = bound1 * (2.0 * rng.uniform() - 1.0);
  for (Eigen::Index k = 0; k < h; ++k) params_[h * d + h + k] = bound2 * (2.0 * rng.uniform() - 1.0);
}

VectorXd Mlp::predict(const MatrixXd& X) const {
  const auto d = static_cast<Eigen::Index>(inputs_);
  const Eigen::Index h = hidden_;
  Eigen::Map<const MatrixXd> W1(params_.data(), h, d);
  Eigen::Map<const VectorXd> b1(params_.data() + h * d, h);
  Eigen::Map<const VectorXd> w2(params_.data() + h * d + h, h);
  const double b2 = params_[h * d + 2 * h];
  MatrixXd act = ((W1 * X.transpose()).colwise() + b1).cwiseMax(0.0);
  return (act.transpose() * w2).array() + b2;
}

double Mlp::loss(const MatrixXd& X, const VectorXd& y, double penalty, VectorXd* grad) const {
  const auto d = static_cast<Eigen::Index>(inputs_);
  const Eigen::Index h = hidden_;
  const auto b = X.rows();
  Eigen::Map<const MatrixXd> W1(params_.data(), h, d);
  Eigen::Map<const VectorXd> b1(params_.data() + h * d, h);
  Eigen::Map<const VectorXd> w2(params_.data() + h * d + h, h);
  const double b2 = params_[h * d + 2 * h];

  const MatrixXd pre = (W1 * X.transpose()).colwise() + b1;  // h x b
  const MatrixXd act = pre.cwiseMax(0.0);
  const VectorXd out = (act.transpose() * w2).array() + b2;
  const VectorXd resid = out - y;
  const double value =
      resid.squaredNorm() / static_cast<double>(b) + penalty * (W1.squaredNorm() + w2.squaredNorm());

  if (grad) {
    grad->resize(params_.size());
    const VectorXd g_out = resid * (2.0 / static_cast<double>(b));
    Eigen::Map<MatrixXd> gW1(grad->data(), h, d);
    Eigen::Map<VectorXd> gb1(grad->data() + h * d, h);
    Eigen::Map<VectorXd> gw2(grad->data() + h * d + h, h);
    gw2 = act * g_out + 2.0 * penalty * w2;
    (*grad)[h * d + 2 * h] = g_out.sum();
    const MatrixXd g_pre =
        (w2 * g_out.transpose()).cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    gW1 = g_pre * X + 2.0 * penalty * W1;
    gb1 = g_pre.rowwise().sum();
  }
  return value;
}

MlpTrainResult train_mlp(const MatrixXd& X, const VectorXd& y, const MlpConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  const auto n = X.rows();
  if (n < 2) throw Error(ErrorCode::EmptyData, "MLP fit needs at least two observations");
  if (y.size() != n) throw Error(ErrorCode::LengthMismatch, "MLP inputs and targets differ in length");

  Rng rng(seed);
  MlpTrainResult result{Mlp(static_cast<std::size_t>(X.cols()), cfg.hidden_units, rng), 0, 0.0};
  Mlp& net = result.net;
  const double penalty = cfg.l2_alpha / static_cast<double>(n);
  const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, n);

  VectorXd m1 = VectorXd::Zero(net.parameters().size());
  VectorXd m2 = VectorXd::Zero(net.parameters().size());
  VectorXd grad;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  MatrixXd xb;
  VectorXd yb;
  long step = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min(batch, n - start);
      xb.resize(len, X.cols());
      yb.resize(len);
      for (Eigen::Index k = 0; k < len; ++k) {
        const auto i = order[static_cast<std::size_t>(start + k)];
        xb.row(k) = X.row(i);
        yb[k] = y[i];
      }
      const double batch_loss = net.loss(xb, yb, penalty, &grad);
      if (!std::isfinite(batch_loss) || !grad.allFinite()) {
        throw Error(ErrorCode::NonFiniteLoss,
                    "MLP loss diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                        std::to_string(step + 1));
      }
      ++step;
      m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * grad;
      m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      net.parameters().array() -= cfg.learning_rate * (m1.array() / c1) /
                                  ((m2.array() / c2).sqrt() + cfg.adam_eps);
    }
    result.epochs = epoch + 1;
  }
  result.final_loss = net.loss(X, y, penalty, nullptr);
  if (!std::isfinite(result.final_loss)) {
    throw Error(ErrorCode::NonFiniteLoss, "MLP final loss is not finite");
  }
  return result;
}

}  // namespace richiv
