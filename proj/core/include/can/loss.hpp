#pragma once

#include <span>
#include <string>
#include <vector>

#include "can/net.hpp"

namespace can {

enum class LossKind { gaussian_nll, abstention, mae };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct AbstentionParams {
  double alpha = 0.0;
  double kappa = 1.0;
};

// 0.5 * log(2 pi)
inline constexpr double kHalfLogTwoPi = 0.91893853320467274178;

// -log N(y; mu, sigma).
double gaussian_nll(double y, const PredictionPair& pred);

// q = min(1, (kappa / sigma)^2).
double prediction_weight(double sigma, double kappa);

// q * nll - alpha * log q. Equals gaussian_nll whenever sigma <= kappa.
double abstention_loss(double y, const PredictionPair& pred, const AbstentionParams& params);

double mae_loss(double y, double mu);

struct LossGrad {
  double d_mu = 0.0;
  double d_sigma = 0.0;
};

// Exact derivatives with respect to (mu, sigma). For abstention the weight q
// is differentiated as a function of sigma; at sigma == kappa the clamped
// branch (dq/dsigma = 0) is used. For mae, d_mu = sign(mu - y) with 0 at the
// tie and d_sigma = 0.
LossGrad loss_gradients(LossKind kind, double y, const PredictionPair& pred,
                        const AbstentionParams* params = nullptr);

double loss_value(LossKind kind, double y, const PredictionPair& pred,
                  const AbstentionParams* params = nullptr);

// Batch-mean loss and per-sample gradients of that mean (each sample's
// gradient divided by the batch size).
struct BatchLoss {
  double mean = 0.0;
  std::vector<OutputGrad> grads;
};

BatchLoss batch_loss(LossKind kind, std::span<const double> y,
                     std::span<const PredictionPair> preds,
                     const AbstentionParams* params = nullptr);

}  // namespace can
