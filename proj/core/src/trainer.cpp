#include "can/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "can/error.hpp"

namespace can {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::baseline:
      return "baseline";
    case Stage::spinup:
      return "spinup";
    case Stage::abstention:
      return "abstention";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (n_spin < 1 && loss_kind == LossKind::abstention) {
    throw ConfigError("abstention training needs n_spin >= 1");
  }
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (loss_kind == LossKind::abstention && n_spin > max_epochs) {
    throw ConfigError("n_spin must not exceed max_epochs");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(l2_first_layer >= 0.0)) throw ConfigError("l2_first_layer must be >= 0");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden widths must be positive");
  }
  if (loss_kind != LossKind::abstention) return;
  if (const auto* c = std::get_if<ConstantAlpha>(&alpha_mode)) {
    if (!(c->alpha >= 0.0)) throw ConfigError("constant alpha must be >= 0");
  } else {
    if (coverage_setpoint_percent < 10 || coverage_setpoint_percent > 90 ||
        coverage_setpoint_percent % 10 != 0) {
      throw ConfigError("coverage setpoint must be one of 10, 20, ..., 90 percent");
    }
    std::get<PidAlpha>(alpha_mode).pid.validate();
  }
}

double percentile(std::vector<double> values, double m) {
  if (values.empty()) throw DomainError("percentile of an empty list");
  if (!(m > 0.0 && m < 100.0)) throw DomainError("percentile level must lie in (0, 100)");
  std::sort(values.begin(), values.end());
  const double rank = m / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

TrainingSession start_session(const TrainConfig& cfg, int input_width) {
  cfg.validate();
  Rng init_rng(derive_seed(cfg.seed, stream::kInit));
  auto model = MlpModel::glorot(dense_architecture(input_width, cfg.hidden, cfg.output_width()),
                                init_rng, cfg.l2_first_layer);
  auto optimizer = OptimizerState::adam(model, cfg.learning_rate);
  return {std::move(model), std::move(optimizer), Rng(derive_seed(cfg.seed, stream::kShuffle)),
          0};
}

namespace {

std::vector<PredictionPair> head_outputs(const MlpModel& model, const ForwardPass& pass) {
  if (model.distributional()) return predictions(pass);
  std::vector<PredictionPair> out(static_cast<std::size_t>(pass.output.rows()));
  for (Eigen::Index i = 0; i < pass.output.rows(); ++i) out[i] = {pass.output(i, 0), 1.0};
  return out;
}

// One pass over the training set in a freshly shuffled order.
double train_epoch(TrainingSession& session, const Dataset& train, const TrainConfig& cfg,
                   LossKind kind, AbstentionState* abstention) {
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), session.shuffle_rng);

  const int features = train.features();
  Matrix xb;
  std::vector<double> yb;
  std::vector<double> sigmas;
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
    const auto rows = static_cast<Eigen::Index>(end - start);
    xb.resize(rows, features);
    yb.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const std::size_t i = order[start + static_cast<std::size_t>(r)];
      xb.row(r) = train.x.row(static_cast<Eigen::Index>(i));
      yb[static_cast<std::size_t>(r)] = train.y[i];
    }
    const ForwardPass pass = forward_pass(session.model, xb);
    const auto preds = head_outputs(session.model, pass);

    AbstentionParams params;
    if (abstention != nullptr) {
      params = {abstention->controller.alpha(), abstention->kappa};
    }
    const BatchLoss loss =
        batch_loss(kind, yb, preds, abstention != nullptr ? &params : nullptr);
    if (!std::isfinite(loss.mean)) {
      throw TrainingDiverged("non-finite training loss at epoch " +
                             std::to_string(session.epoch));
    }
    total += loss.mean * static_cast<double>(rows);

    if (abstention != nullptr) {
      sigmas.resize(preds.size());
      std::transform(preds.begin(), preds.end(), sigmas.begin(),
                     [](const PredictionPair& p) { return p.sigma; });
      abstention->controller.observe_batch(sigmas, abstention->tau, session.epoch);
    }

    const Parameters grads = backward(session.model, pass, loss.grads);
    optimizer_step(session.optimizer, session.model, grads);
  }
  return total / static_cast<double>(n) + session.model.l2_penalty();
}

struct Validation {
  double loss = 0.0;
  std::optional<double> abstention;
  std::vector<double> sigmas;
};

Validation validate(const MlpModel& model, const Dataset& val, LossKind kind,
                    const AbstentionState* abstention) {
  const auto preds = head_outputs(model, forward_pass(model, val.x));
  AbstentionParams params;
  if (abstention != nullptr) params = {abstention->controller.alpha(), abstention->kappa};
  const BatchLoss loss = batch_loss(kind, val.y, preds, abstention != nullptr ? &params : nullptr);
  Validation v;
  v.loss = loss.mean + model.l2_penalty();
  if (model.distributional()) {
    v.sigmas.resize(preds.size());
    std::transform(preds.begin(), preds.end(), v.sigmas.begin(),
                   [](const PredictionPair& p) { return p.sigma; });
    if (abstention != nullptr) v.abstention = measure_abstention(v.sigmas, abstention->tau);
  }
  return v;
}

void check_data(const TrainData& data, const MlpModel& model) {
  if (data.train.size() == 0 || data.val.size() == 0) {
    throw DomainError("training and validation sets must be non-empty");
  }
  if (data.train.features() != model.input_width() || data.val.features() != model.input_width()) {
    throw DimensionError("dataset feature count does not match layer 0 input width " +
                         std::to_string(model.input_width()));
  }
}

// Early-stopping loop shared by the baseline and abstention stages. Every
// epoch counts toward patience; only eligible epochs compete for the
// returned checkpoint.
RunRecord train_until_stopped(TrainingSession& session, const TrainData& data,
                              const TrainConfig& cfg, LossKind kind, Stage stage,
                              AbstentionState* abstention, std::vector<EpochRecord> epochs) {
  double best_monitor = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  std::optional<MlpModel> best_model;
  int best_epoch = -1;
  double best_loss = std::numeric_limits<double>::infinity();
  std::optional<double> best_abstention;
  double closest_gap = std::numeric_limits<double>::infinity();
  double closest_fraction = std::numeric_limits<double>::quiet_NaN();

  const bool pid = abstention != nullptr && abstention->controller.is_pid();
  const double setpoint = cfg.abstention_setpoint();

  while (session.epoch < cfg.max_epochs) {
    const double train_loss = train_epoch(session, data.train, cfg, kind, abstention);
    const Validation v = validate(session.model, data.val, kind, abstention);
    if (!std::isfinite(v.loss)) {
      throw TrainingDiverged("non-finite validation loss at epoch " +
                             std::to_string(session.epoch));
    }

    EpochRecord rec;
    rec.epoch = session.epoch;
    rec.stage = stage;
    rec.train_loss = train_loss;
    rec.val_loss = v.loss;
    rec.val_abstention = v.abstention;
    if (abstention != nullptr) {
      rec.alpha = abstention->controller.alpha();
      rec.kappa = abstention->kappa;
      rec.tau = abstention->tau;
    }
    if (pid) {
      const double gap = std::abs(*v.abstention - setpoint);
      rec.eligible = gap <= 0.1 + 1e-12;
      if (gap < closest_gap) {
        closest_gap = gap;
        closest_fraction = *v.abstention;
      }
    }
    epochs.push_back(rec);
    ++session.epoch;

    if (rec.eligible && v.loss < best_loss) {
      best_loss = v.loss;
      best_model = session.model;
      best_epoch = rec.epoch;
      best_abstention = v.abstention;
    }
    if (v.loss < best_monitor) {
      best_monitor = v.loss;
      since_improvement = 0;
    } else if (++since_improvement >= cfg.patience) {
      break;
    }
  }

  if (!best_model) {
    if (pid) {
      throw SetpointUnreachable(
          "no epoch reached validation abstention within 0.1 of setpoint " +
              std::to_string(setpoint) + "; closest was " + std::to_string(closest_fraction),
          closest_fraction);
    }
    throw SetpointUnreachable("no training epoch ran after spin-up", closest_fraction);
  }

  RunRecord record{cfg,
                   std::move(epochs),
                   best_epoch,
                   best_loss,
                   best_abstention,
                   std::move(*best_model),
                   session.model,
                   std::nullopt,
                   {}};
  if (abstention != nullptr) {
    record.abstention = *abstention;
    record.control_log = abstention->controller.log();
  }
  return record;
}

}  // namespace

AbstentionState run_spinup(TrainingSession& session, const TrainData& data,
                           const TrainConfig& cfg) {
  if (cfg.loss_kind != LossKind::abstention) {
    throw ConfigError("spin-up belongs to abstention training");
  }
  check_data(data, session.model);
  while (session.epoch < cfg.n_spin) {
    train_epoch(session, data.train, cfg, LossKind::gaussian_nll, nullptr);
    ++session.epoch;
  }
  const Validation v = validate(session.model, data.val, LossKind::gaussian_nll, nullptr);
  for (double s : v.sigmas) {
    if (!std::isfinite(s)) throw TrainingDiverged("non-finite validation sigma after spin-up");
  }
  AbstentionState state;
  for (int m : kPercentileLevels) state.percentiles[m] = percentile(v.sigmas, m);
  state.kappa = state.percentiles.at(90);
  if (const auto* pid = std::get_if<PidAlpha>(&cfg.alpha_mode)) {
    state.tau = state.percentiles.at(cfg.coverage_setpoint_percent);
    PidConfig pc = pid->pid;
    pc.setpoint = cfg.abstention_setpoint();
    state.controller = AlphaController::pid(pc, 0.0);
  } else {
    state.tau = state.kappa;
    state.controller = AlphaController::constant(std::get<ConstantAlpha>(cfg.alpha_mode).alpha);
  }
  state.stage = Stage::abstention;
  return state;
}

RunRecord run_abstention_stage(TrainingSession& session, AbstentionState state,
                               const TrainData& data, const TrainConfig& cfg,
                               std::vector<EpochRecord> spinup_epochs) {
  if (state.stage != Stage::abstention) {
    throw ConfigError("abstention stage started before spin-up finished");
  }
  check_data(data, session.model);
  return train_until_stopped(session, data, cfg, LossKind::abstention, Stage::abstention,
                             &state, std::move(spinup_epochs));
}

RunRecord run_baseline(TrainingSession& session, const TrainData& data,
                       const TrainConfig& cfg) {
  if (cfg.loss_kind == LossKind::abstention) {
    throw ConfigError("baseline training needs the gaussian_nll or mae loss");
  }
  if ((cfg.loss_kind == LossKind::mae) != !session.model.distributional()) {
    throw ConfigError("mae needs a one-output model, gaussian_nll a two-output model");
  }
  check_data(data, session.model);
  return train_until_stopped(session, data, cfg, cfg.loss_kind, Stage::baseline, nullptr, {});
}

namespace {

// Spin-up with per-epoch records, for the full two-stage run.
RunRecord run_two_stage(const TrainConfig& cfg, const TrainData& data) {
  TrainingSession session = start_session(cfg, data.train.features());
  check_data(data, session.model);
  std::vector<EpochRecord> epochs;
  while (session.epoch < cfg.n_spin) {
    const double train_loss =
        train_epoch(session, data.train, cfg, LossKind::gaussian_nll, nullptr);
    const Validation v = validate(session.model, data.val, LossKind::gaussian_nll, nullptr);
    EpochRecord rec;
    rec.epoch = session.epoch;
    rec.stage = Stage::spinup;
    rec.train_loss = train_loss;
    rec.val_loss = v.loss;
    rec.eligible = false;
    epochs.push_back(rec);
    ++session.epoch;
  }
  // The loop above already ran every spin-up epoch; this only freezes the
  // percentiles.
  AbstentionState state = run_spinup(session, data, cfg);
  return run_abstention_stage(session, std::move(state), data, cfg, std::move(epochs));
}

}  // namespace

RunRecord run_training(const TrainConfig& cfg, const TrainData& data) {
  cfg.validate();
  if (cfg.loss_kind == LossKind::abstention) return run_two_stage(cfg, data);
  TrainingSession session = start_session(cfg, data.train.features());
  return run_baseline(session, data, cfg);
}

std::vector<EnsembleMember> run_ensemble_members(const TrainConfig& cfg, const TrainData& data,
                                                 int n_models, int jobs) {
  if (n_models < 1) throw ConfigError("ensemble needs at least one model");
  std::vector<EnsembleMember> members(static_cast<std::size_t>(n_models));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int k = next++; k < n_models; k = next++) {
      auto& m = members[static_cast<std::size_t>(k)];
      m.index = k;
      m.seed = cfg.seed + static_cast<std::uint64_t>(k);
      TrainConfig member_cfg = cfg;
      member_cfg.seed = m.seed;
      try {
        m.record.emplace(run_training(member_cfg, data));
      } catch (const Error& e) {
        m.error_kind = e.kind();
        m.error_message = e.what();
      } catch (const std::exception& e) {
        m.error_kind = "internal_error";
        m.error_message = e.what();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, n_models);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return members;
}

std::vector<RunRecord> run_ensemble(const TrainConfig& cfg, const TrainData& data, int n_models,
                                    int jobs) {
  auto members = run_ensemble_members(cfg, data, n_models, jobs);
  std::vector<RunRecord> records;
  for (auto& m : members) {
    if (!m.ok()) {
      throw Error(m.error_kind, "run " + std::to_string(m.index) + ": " + m.error_message);
    }
    records.push_back(std::move(*m.record));
  }
  return records;
}

}  // namespace can
