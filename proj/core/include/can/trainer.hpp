#pragma once

// Two-stage training of controlled-abstention networks and single-stage
// training of the baselines.
//
// Abstention runs first train N_spin epochs on the Gaussian NLL. At the end of
// spin-up the validation sigma percentiles P_10..P_90 are frozen; kappa = P_90
// and tau = P_m (PID mode, m the coverage setpoint in percent) or tau = kappa
// (constant-alpha mode). Training then continues with the abstention loss,
// same optimizer state and shuffle stream, until early stopping.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "can/controller.hpp"
#include "can/loss.hpp"
#include "can/net.hpp"
#include "can/synthdata.hpp"

namespace can {

struct ConstantAlpha {
  double alpha = 0.1;
};

struct PidAlpha {
  PidConfig pid;
};

using AlphaMode = std::variant<ConstantAlpha, PidAlpha>;

struct TrainConfig {
  std::vector<int> hidden = {50, 25};
  int n_spin = 15;
  int max_epochs = 500;
  int patience = 60;
  int batch_size = 32;
  double learning_rate = 5e-4;
  LossKind loss_kind = LossKind::gaussian_nll;
  AlphaMode alpha_mode = ConstantAlpha{};
  // PID mode only: tau = P_m and the abstention setpoint is 1 - m / 100.
  int coverage_setpoint_percent = 0;
  double l2_first_layer = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool pid_mode() const { return std::holds_alternative<PidAlpha>(alpha_mode); }
  double abstention_setpoint() const { return 1.0 - coverage_setpoint_percent / 100.0; }
  int output_width() const { return loss_kind == LossKind::mae ? 1 : 2; }
};

enum class Stage { baseline, spinup, abstention };
std::string to_string(Stage stage);

struct TrainData {
  const Dataset& train;
  const Dataset& val;
};

struct EpochRecord {
  int epoch = 0;
  Stage stage = Stage::baseline;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_abstention;  // abstention stage only
  double alpha = 0.0;
  double kappa = 0.0;
  double tau = 0.0;
  bool eligible = true;
};

// Percentile levels computed at the end of spin-up.
inline constexpr int kPercentileLevels[] = {10, 20, 30, 40, 50, 60, 70, 80, 90};

struct AbstentionState {
  double kappa = 0.0;
  double tau = 0.0;
  std::map<int, double> percentiles;
  Stage stage = Stage::spinup;
  AlphaController controller = AlphaController::constant(0.0);
};

// Everything that carries over from one training stage to the next.
struct TrainingSession {
  MlpModel model;
  OptimizerState optimizer;
  Rng shuffle_rng;
  int epoch = 0;
};

struct RunRecord {
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::optional<double> best_val_abstention;
  MlpModel best_model;
  MlpModel final_model;
  std::optional<AbstentionState> abstention;
  std::vector<ControlStep> control_log;
};

// Linear interpolation between order statistics at rank m/100 * (n - 1).
double percentile(std::vector<double> values, double m);

// Fresh Glorot-initialized model and Adam state from the config's seed.
TrainingSession start_session(const TrainConfig& cfg, int input_width);

// Trains n_spin epochs on the Gaussian NLL and freezes kappa and tau.
AbstentionState run_spinup(TrainingSession& session, const TrainData& data,
                           const TrainConfig& cfg);

// Continues with the abstention loss until early stopping; returns the best
// eligible epoch's checkpoint.
RunRecord run_abstention_stage(TrainingSession& session, AbstentionState state,
                               const TrainData& data, const TrainConfig& cfg,
                               std::vector<EpochRecord> spinup_epochs = {});

// Single-stage Gaussian-NLL or MAE training with early stopping.
RunRecord run_baseline(TrainingSession& session, const TrainData& data,
                       const TrainConfig& cfg);

// Dispatches on cfg.loss_kind.
RunRecord run_training(const TrainConfig& cfg, const TrainData& data);

struct EnsembleMember {
  int index = 0;
  std::uint64_t seed = 0;
  std::optional<RunRecord> record;
  std::string error_kind;
  std::string error_message;

  bool ok() const { return record.has_value(); }
};

// n_models runs with seeds cfg.seed + index, on up to `jobs` threads. Member
// failures are captured, not thrown.
std::vector<EnsembleMember> run_ensemble_members(const TrainConfig& cfg, const TrainData& data,
                                                 int n_models, int jobs = 1);

// As above but throws the first member failure, tagged with its run index.
std::vector<RunRecord> run_ensemble(const TrainConfig& cfg, const TrainData& data,
                                    int n_models, int jobs = 1);

}  // namespace can
