#include "can/controller.hpp"

#include <algorithm>

#include "can/error.hpp"

namespace can {

void PidConfig::validate() const {
  if (!(kp >= 0.0 && ki >= 0.0 && kd >= 0.0)) throw ConfigError("PID gains must be >= 0");
  if (window_batches < 1) throw ConfigError("window_batches must be >= 1");
  if (!(alpha_min >= 0.0) || !(alpha_min <= alpha_max)) {
    throw ConfigError("need 0 <= alpha_min <= alpha_max");
  }
  if (!(setpoint >= 0.0 && setpoint <= 1.0)) {
    throw ConfigError("abstention setpoint must lie in [0, 1]");
  }
}

double measure_abstention(std::span<const double> sigmas, double tau) {
  if (sigmas.empty()) throw DomainError("cannot measure abstention of an empty batch");
  const auto abstained = std::count_if(sigmas.begin(), sigmas.end(),
                                       [tau](double s) { return s > tau; });
  return static_cast<double>(abstained) / static_cast<double>(sigmas.size());
}

PidState pid_update(const PidState& state, const PidConfig& cfg, double measured_abstention) {
  PidState next = state;
  const double e = measured_abstention - cfg.setpoint;
  const double delta = cfg.kp * (e - state.e_prev) + cfg.ki * e +
                       cfg.kd * (e - 2.0 * state.e_prev + state.e_prev2);
  next.alpha = std::clamp(state.alpha + delta, cfg.alpha_min, cfg.alpha_max);
  next.e_prev2 = state.e_prev;
  next.e_prev = e;
  next.window_abstained = 0;
  next.window_total = 0;
  next.window_batches_seen = 0;
  return next;
}

AlphaController AlphaController::constant(double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("constant alpha must be >= 0");
  AlphaController c;
  c.pid_ = false;
  c.state_.alpha = alpha;
  return c;
}

AlphaController AlphaController::pid(const PidConfig& cfg, double initial_alpha) {
  cfg.validate();
  AlphaController c;
  c.pid_ = true;
  c.cfg_ = cfg;
  c.state_.alpha = std::clamp(initial_alpha, cfg.alpha_min, cfg.alpha_max);
  return c;
}

void AlphaController::observe_batch(std::span<const double> sigmas, double tau, int epoch) {
  if (!pid_ || sigmas.empty()) return;
  state_.window_abstained += std::count_if(sigmas.begin(), sigmas.end(),
                                           [tau](double s) { return s > tau; });
  state_.window_total += static_cast<long>(sigmas.size());
  if (++state_.window_batches_seen < cfg_.window_batches) return;

  const double measured =
      static_cast<double>(state_.window_abstained) / static_cast<double>(state_.window_total);
  const double before = state_.alpha;
  state_ = pid_update(state_, cfg_, measured);
  log_.push_back({epoch, windows_completed_++, measured, state_.e_prev,
                  state_.alpha - before, state_.alpha});
}

}  // namespace can
