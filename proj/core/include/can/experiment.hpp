#pragma once

// Declarative experiment runner: one JSON config describes the data, the
// models and the ensemble; generate / train / evaluate each read and write a
// fixed output layout under out_dir.
//
//   out_dir/config.json
//   out_dir/data/{train,val,test}.bin
//   out_dir/runs/<tag>/seed_<k>/{run.json, metrics.csv, controller.csv, checkpoint.json}
//   out_dir/evaluation/{coverage.csv, envelope_<tag>.csv, can_points.csv,
//                       calibration_<tag>_seed_<k>.csv, calibration_summary.csv,
//                       summary.json, mae_vs_coverage.svg, zscores.svg}
//
// Every file carries the config hash, which covers everything except out_dir
// and jobs.

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "can/evaluate.hpp"
#include "can/synthdata.hpp"
#include "can/trainer.hpp"

namespace can {

enum class ExperimentKind { oned, enso_pid, enso_const, corrupt };
std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

struct DataConfig {
  int n_train = 8000;
  int n_val = 5000;
  int n_test = 5000;
  GridSpec grid;
  Kernel kernel = Kernel::gaussian_greatcircle;
  double length_scale_km = 2500.0;
  double nugget = 1e-6;
  double response_scale = kDefaultResponseScale;
  LonLatBox enso_box;
  double enso_threshold = 0.5;
  double corrupt_sample_fraction = 0.30;
  double corrupt_pixel_fraction = 0.66;
  double corrupt_fill = -4.0;
};

// One trained model family. Shared training hyperparameters live in
// ExperimentConfig::train; a model only picks its loss and alpha mode.
struct ModelSpec {
  std::string tag;
  LossKind loss = LossKind::gaussian_nll;
  std::optional<double> alpha;                     // constant-alpha abstention
  std::optional<int> coverage_setpoint_percent;    // PID abstention
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::oned;
  std::uint64_t seed = 0;
  int ensemble = 20;
  int jobs = 1;
  std::string out_dir = "out";
  DataConfig data;
  TrainConfig train;  // loss_kind, alpha_mode and seed are set per model and member
  std::vector<ModelSpec> models;
  std::vector<double> coverage_levels = default_coverage_levels();
  bool svg = true;

  void validate() const;
};

// Default hyperparameters for each experiment.
ExperimentConfig default_config(ExperimentKind kind);

nlohmann::json to_json(const ExperimentConfig& cfg);
// Missing keys take the experiment's defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);

// 16 hex digits of FNV-1a over the canonical JSON without out_dir and jobs.
std::string config_hash(const ExperimentConfig& cfg);

// Model-specific training config; member k trains with seed cfg.seed + k.
TrainConfig train_config_for(const ExperimentConfig& cfg, const ModelSpec& model);

struct ExperimentData {
  Dataset train;
  Dataset val;
  Dataset test;
};

ExperimentData generate_data(const ExperimentConfig& cfg);

// Per-run artifact summary, written as run.json.
struct RunSummary {
  std::string tag;
  LossKind loss = LossKind::gaussian_nll;
  std::uint64_t seed = 0;
  std::string status;  // "ok" or "failed"
  std::string error_kind;
  std::string error_message;
  std::string config_hash;
  std::string metrics_path;
  std::string controller_path;
  std::string checkpoint_path;
  int best_epoch = -1;
  int epochs_run = 0;
  double best_val_loss = 0.0;
  std::optional<double> realized_val_coverage;
  std::optional<double> kappa;
  std::optional<double> tau;
  double seconds = 0.0;
};

nlohmann::json to_json(const RunSummary& run);
RunSummary run_summary_from_json(const nlohmann::json& doc);

// Stage commands. All return the paths they wrote.
struct CommandOptions {
  bool force = false;
};

std::vector<std::string> cmd_generate(const ExperimentConfig& cfg, const CommandOptions& opts);
std::vector<RunSummary> cmd_train(const ExperimentConfig& cfg, const CommandOptions& opts);
// Evaluates the given run directories against out_dir/data. An empty list
// is a usage error.
std::vector<std::string> cmd_evaluate(const ExperimentConfig& cfg,
                                      const std::vector<std::string>& run_dirs);
// All run directories under out_dir/runs in (tag, seed) order.
std::vector<std::string> discover_runs(const std::string& out_dir);

// Writes the config snapshot, then runs every stage in order.
nlohmann::json cmd_reproduce(const ExperimentConfig& cfg, const CommandOptions& opts);

// Per-run metric tables.
void write_metrics_csv(const std::string& path, const RunRecord& record,
                       const std::string& config_hash);
void write_controller_csv(const std::string& path, const RunRecord& record,
                          const std::string& config_hash);

}  // namespace can
