#pragma once

// Velocity-form PID control of the abstention penalty alpha.
//
// The plant is the network's abstention fraction. Measurements are taken over
// fixed windows of consecutive training batches; each completed window yields
// one control step:
//
//   e      = measured - setpoint
//   dalpha = kp (e - e1) + ki e + kd (e - 2 e1 + e2)
//   alpha  = clamp(alpha + dalpha, alpha_min, alpha_max)
//
// Abstaining more than requested raises alpha, which strengthens the
// -alpha log q penalty and pushes sigma back below tau.

#include <span>
#include <vector>

namespace can {

struct PidConfig {
  double kp = 1.0;
  double ki = 0.5;
  double kd = 0.0;
  int window_batches = 6;
  double alpha_min = 0.0;
  double alpha_max = 10.0;
  double setpoint = 0.5;  // abstention fraction

  void validate() const;
};

struct PidState {
  double alpha = 0.0;
  double e_prev = 0.0;
  double e_prev2 = 0.0;
  long window_abstained = 0;
  long window_total = 0;
  int window_batches_seen = 0;
};

// Fraction of sigmas strictly above tau.
double measure_abstention(std::span<const double> sigmas, double tau);

PidState pid_update(const PidState& state, const PidConfig& cfg, double measured_abstention);

// One record per control step.
struct ControlStep {
  int epoch = 0;
  long window_index = 0;
  double measured = 0.0;
  double error = 0.0;
  double delta_alpha = 0.0;
  double alpha = 0.0;
};

// Owns alpha for the abstention stage. In constant mode alpha never changes
// and no control steps are logged.
class AlphaController {
 public:
  static AlphaController constant(double alpha);
  static AlphaController pid(const PidConfig& cfg, double initial_alpha = 0.0);

  bool is_pid() const { return pid_; }
  double alpha() const { return state_.alpha; }
  const PidState& state() const { return state_; }
  const PidConfig& config() const { return cfg_; }
  const std::vector<ControlStep>& log() const { return log_; }

  // Records one training batch's abstention decisions. Windows span epoch
  // boundaries; the update fires when the window's batch count is reached.
  void observe_batch(std::span<const double> sigmas, double tau, int epoch);

 private:
  AlphaController() = default;

  bool pid_ = false;
  PidConfig cfg_;
  PidState state_;
  long windows_completed_ = 0;
  std::vector<ControlStep> log_;
};

}  // namespace can
