#include "can/loss.hpp"

#include <cmath>

#include "can/error.hpp"

namespace can {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::gaussian_nll:
      return "gaussian_nll";
    case LossKind::abstention:
      return "abstention";
    case LossKind::mae:
      return "mae";
  }
  throw ConfigError("unknown loss kind");
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "gaussian_nll") return LossKind::gaussian_nll;
  if (name == "abstention") return LossKind::abstention;
  if (name == "mae") return LossKind::mae;
  throw ConfigError("unknown loss kind '" + name + "'");
}

namespace {

void require_sigma(double sigma) {
  if (!(sigma > 0.0)) {
    throw DomainError("sigma must be strictly positive, got " + std::to_string(sigma));
  }
}

void require_params(const AbstentionParams* params) {
  if (params == nullptr) throw ConfigError("abstention loss needs (alpha, kappa)");
  if (!(params->kappa > 0.0)) throw DomainError("kappa must be strictly positive");
  if (!(params->alpha >= 0.0)) throw DomainError("alpha must be non-negative");
}

}  // namespace

double gaussian_nll(double y, const PredictionPair& pred) {
  require_sigma(pred.sigma);
  const double r = y - pred.mu;
  return kHalfLogTwoPi + std::log(pred.sigma) + r * r / (2.0 * pred.sigma * pred.sigma);
}

double prediction_weight(double sigma, double kappa) {
  require_sigma(sigma);
  if (!(kappa > 0.0)) throw DomainError("kappa must be strictly positive");
  if (sigma <= kappa) return 1.0;
  const double ratio = kappa / sigma;
  return ratio * ratio;
}

double abstention_loss(double y, const PredictionPair& pred, const AbstentionParams& params) {
  require_params(&params);
  const double q = prediction_weight(pred.sigma, params.kappa);
  const double nll = gaussian_nll(y, pred);
  if (q == 1.0) return nll;
  return q * nll - params.alpha * std::log(q);
}

double mae_loss(double y, double mu) { return std::abs(y - mu); }

LossGrad loss_gradients(LossKind kind, double y, const PredictionPair& pred,
                        const AbstentionParams* params) {
  switch (kind) {
    case LossKind::gaussian_nll:
    case LossKind::abstention: {
      require_sigma(pred.sigma);
      const double s = pred.sigma;
      const double r = pred.mu - y;
      const double dmu = r / (s * s);
      const double dsigma = 1.0 / s - r * r / (s * s * s);
      if (kind == LossKind::gaussian_nll) return {dmu, dsigma};
      require_params(params);
      if (s <= params->kappa) return {dmu, dsigma};
      // q = kappa^2 / sigma^2, dq/dsigma = -2 q / sigma,
      // d(-alpha log q)/dsigma = 2 alpha / sigma.
      const double q = prediction_weight(s, params->kappa);
      const double nll = gaussian_nll(y, pred);
      return {q * dmu, q * dsigma - 2.0 * q * nll / s + 2.0 * params->alpha / s};
    }
    case LossKind::mae: {
      const double diff = pred.mu - y;
      return {diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0), 0.0};
    }
  }
  throw ConfigError("unknown loss kind");
}

double loss_value(LossKind kind, double y, const PredictionPair& pred,
                  const AbstentionParams* params) {
  switch (kind) {
    case LossKind::gaussian_nll:
      return gaussian_nll(y, pred);
    case LossKind::abstention:
      require_params(params);
      return abstention_loss(y, pred, *params);
    case LossKind::mae:
      return mae_loss(y, pred.mu);
  }
  throw ConfigError("unknown loss kind");
}

BatchLoss batch_loss(LossKind kind, std::span<const double> y,
                     std::span<const PredictionPair> preds, const AbstentionParams* params) {
  if (y.size() != preds.size()) {
    throw DimensionError("batch has " + std::to_string(preds.size()) +
                         " predictions but " + std::to_string(y.size()) + " targets");
  }
  BatchLoss out;
  out.grads.resize(preds.size());
  if (preds.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(preds.size());
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    total += loss_value(kind, y[i], preds[i], params);
    const LossGrad g = loss_gradients(kind, y[i], preds[i], params);
    out.grads[i] = {g.d_mu * inv_n, g.d_sigma * inv_n};
  }
  out.mean = total * inv_n;
  return out;
}

}  // namespace can
