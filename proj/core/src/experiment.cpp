#include "can/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "can/csv.hpp"
#include "can/error.hpp"
#include "can/rng.hpp"
#include "can/svg.hpp"

namespace can {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::oned:
      return "oned";
    case ExperimentKind::enso_pid:
      return "enso_pid";
    case ExperimentKind::enso_const:
      return "enso_const";
    case ExperimentKind::corrupt:
      return "corrupt";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  for (auto k : {ExperimentKind::oned, ExperimentKind::enso_pid, ExperimentKind::enso_const,
                 ExperimentKind::corrupt}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown experiment '" + name +
                    "' (expected oned, enso_pid, enso_const or corrupt)");
}

// ---------------------------------------------------------------------------
// Defaults

namespace {

ModelSpec baseline_model() { return {"baseline", LossKind::gaussian_nll, {}, {}}; }

ModelSpec constant_can(double alpha) { return {"can", LossKind::abstention, alpha, {}}; }

std::string pid_tag(int percent) { return "can_pid_m" + std::to_string(percent); }

}  // namespace

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig cfg;
  cfg.experiment = kind;
  cfg.out_dir = "out/" + to_string(kind);
  cfg.train.alpha_mode = PidAlpha{};
  switch (kind) {
    case ExperimentKind::oned:
      cfg.data.n_train = 3000;
      cfg.data.n_val = 1000;
      cfg.data.n_test = 1000;
      cfg.train.hidden = {5, 5};
      cfg.train.n_spin = 225;
      cfg.train.max_epochs = 2000;
      cfg.train.learning_rate = 1e-4;
      cfg.models = {baseline_model(), constant_can(0.1),
                    {"mae", LossKind::mae, std::nullopt, std::nullopt}};
      break;
    case ExperimentKind::enso_const:
      cfg.models = {baseline_model(), constant_can(0.1)};
      break;
    case ExperimentKind::enso_pid:
      cfg.models = {baseline_model()};
      for (int m = 10; m <= 90; m += 10) {
        cfg.models.push_back({pid_tag(m), LossKind::abstention, std::nullopt, m});
      }
      break;
    case ExperimentKind::corrupt:
      cfg.models = {baseline_model(), constant_can(0.05)};
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Validation

void ExperimentConfig::validate() const {
  if (ensemble < 1) throw ConfigError("ensemble must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (out_dir.empty()) throw ConfigError("out_dir must be non-empty");
  if (data.n_train < 1 || data.n_val < 1 || data.n_test < 1) {
    throw ConfigError("every split needs at least one sample");
  }
  if (experiment != ExperimentKind::oned) {
    if (data.grid.n_lon < 1 || data.grid.n_lat < 1) throw ConfigError("grid must be non-empty");
    if (!(data.length_scale_km > 0.0)) throw ConfigError("length_scale_km must be positive");
    if (!(data.nugget >= 0.0)) throw ConfigError("nugget must be >= 0");
    if (!(data.response_scale > 0.0)) throw ConfigError("response_scale must be positive");
  }
  if (!(data.corrupt_sample_fraction >= 0.0 && data.corrupt_sample_fraction <= 1.0) ||
      !(data.corrupt_pixel_fraction >= 0.0 && data.corrupt_pixel_fraction <= 1.0)) {
    throw ConfigError("corruption fractions must lie in [0, 1]");
  }
  if (models.empty()) throw ConfigError("at least one model is required");
  std::set<std::string> tags;
  for (const auto& m : models) {
    if (m.tag.empty() ||
        !std::all_of(m.tag.begin(), m.tag.end(), [](char c) {
          return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
        })) {
      throw ConfigError("model tag '" + m.tag + "' must be non-empty [A-Za-z0-9_-]");
    }
    if (!tags.insert(m.tag).second) throw ConfigError("duplicate model tag '" + m.tag + "'");
    if (m.loss == LossKind::abstention) {
      if (m.alpha.has_value() == m.coverage_setpoint_percent.has_value()) {
        throw ConfigError("abstention model '" + m.tag +
                          "' needs exactly one of alpha or coverage_setpoint");
      }
    } else if (m.alpha || m.coverage_setpoint_percent) {
      throw ConfigError("model '" + m.tag + "' sets alpha/coverage_setpoint without abstention loss");
    }
    train_config_for(*this, m).validate();
  }
  if (coverage_levels.empty()) throw ConfigError("coverage_levels must be non-empty");
  for (std::size_t k = 0; k < coverage_levels.size(); ++k) {
    if (!(coverage_levels[k] > 0.0 && coverage_levels[k] <= 1.0) ||
        (k > 0 && !(coverage_levels[k] > coverage_levels[k - 1]))) {
      throw ConfigError("coverage_levels must be strictly increasing in (0, 1]");
    }
  }
}

TrainConfig train_config_for(const ExperimentConfig& cfg, const ModelSpec& model) {
  TrainConfig t = cfg.train;
  t.loss_kind = model.loss;
  t.seed = cfg.seed;
  t.coverage_setpoint_percent = 0;
  if (model.loss == LossKind::abstention) {
    if (model.coverage_setpoint_percent) {
      PidAlpha pid;
      if (const auto* p = std::get_if<PidAlpha>(&cfg.train.alpha_mode)) pid = *p;
      t.alpha_mode = pid;
      t.coverage_setpoint_percent = *model.coverage_setpoint_percent;
    } else {
      t.alpha_mode = ConstantAlpha{model.alpha.value_or(0.1)};
    }
  } else {
    t.alpha_mode = ConstantAlpha{0.0};
  }
  return t;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& target) {
  if (obj.contains(key)) target = obj.at(key).get<T>();
}

const PidConfig& pid_of(const TrainConfig& t) {
  static const PidConfig defaults;
  if (const auto* p = std::get_if<PidAlpha>(&t.alpha_mode)) return p->pid;
  return defaults;
}

json model_to_json(const ModelSpec& m) {
  json j = {{"tag", m.tag}, {"loss", to_string(m.loss)}};
  if (m.alpha) j["alpha"] = *m.alpha;
  if (m.coverage_setpoint_percent) j["coverage_setpoint"] = *m.coverage_setpoint_percent;
  return j;
}

ModelSpec model_from_json(const json& j) {
  reject_unknown(j, {"tag", "loss", "alpha", "coverage_setpoint"}, "model");
  ModelSpec m;
  m.tag = j.at("tag").get<std::string>();
  m.loss = parse_loss_kind(j.at("loss").get<std::string>());
  if (j.contains("alpha")) m.alpha = j.at("alpha").get<double>();
  if (j.contains("coverage_setpoint")) m.coverage_setpoint_percent = j.at("coverage_setpoint").get<int>();
  return m;
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  const auto& t = cfg.train;
  const auto& pid = pid_of(t);
  json models = json::array();
  for (const auto& m : cfg.models) models.push_back(model_to_json(m));
  return {
      {"experiment", to_string(cfg.experiment)},
      {"seed", cfg.seed},
      {"ensemble", cfg.ensemble},
      {"jobs", cfg.jobs},
      {"out_dir", cfg.out_dir},
      {"data",
       {{"n_train", d.n_train},
        {"n_val", d.n_val},
        {"n_test", d.n_test},
        {"grid", {{"n_lon", d.grid.n_lon}, {"n_lat", d.grid.n_lat}}},
        {"kernel", "gaussian_greatcircle"},
        {"length_scale_km", d.length_scale_km},
        {"nugget", d.nugget},
        {"response_scale", d.response_scale},
        {"enso",
         {{"box",
           {{"lon_min", d.enso_box.lon_min},
            {"lon_max", d.enso_box.lon_max},
            {"lat_min", d.enso_box.lat_min},
            {"lat_max", d.enso_box.lat_max}}},
          {"threshold", d.enso_threshold}}},
        {"corrupt",
         {{"sample_fraction", d.corrupt_sample_fraction},
          {"pixel_fraction", d.corrupt_pixel_fraction},
          {"fill", d.corrupt_fill}}}}},
      {"train",
       {{"hidden", t.hidden},
        {"n_spin", t.n_spin},
        {"max_epochs", t.max_epochs},
        {"patience", t.patience},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"l2_first_layer", t.l2_first_layer},
        {"pid",
         {{"kp", pid.kp},
          {"ki", pid.ki},
          {"kd", pid.kd},
          {"window_batches", pid.window_batches},
          {"alpha_min", pid.alpha_min},
          {"alpha_max", pid.alpha_max}}}}},
      {"models", models},
      {"evaluate", {{"coverage_levels", cfg.coverage_levels}, {"svg", cfg.svg}}},
  };
}

ExperimentConfig config_from_json(const json& doc) {
  try {
    reject_unknown(doc, {"experiment", "seed", "ensemble", "jobs", "out_dir", "data", "train",
                         "models", "evaluate", "config_hash"},
                   "config");
    ExperimentConfig cfg =
        default_config(parse_experiment_kind(doc.at("experiment").get<std::string>()));
    read(doc, "seed", cfg.seed);
    read(doc, "ensemble", cfg.ensemble);
    read(doc, "jobs", cfg.jobs);
    read(doc, "out_dir", cfg.out_dir);

    if (doc.contains("data")) {
      const auto& j = doc.at("data");
      reject_unknown(j, {"n_train", "n_val", "n_test", "grid", "kernel", "length_scale_km",
                         "nugget", "response_scale", "enso", "corrupt"},
                     "data");
      auto& d = cfg.data;
      read(j, "n_train", d.n_train);
      read(j, "n_val", d.n_val);
      read(j, "n_test", d.n_test);
      if (j.contains("grid")) {
        reject_unknown(j.at("grid"), {"n_lon", "n_lat"}, "data.grid");
        read(j.at("grid"), "n_lon", d.grid.n_lon);
        read(j.at("grid"), "n_lat", d.grid.n_lat);
      }
      if (j.contains("kernel") && j.at("kernel").get<std::string>() != "gaussian_greatcircle") {
        throw ConfigError("only the gaussian_greatcircle kernel is available");
      }
      read(j, "length_scale_km", d.length_scale_km);
      read(j, "nugget", d.nugget);
      read(j, "response_scale", d.response_scale);
      if (j.contains("enso")) {
        const auto& e = j.at("enso");
        reject_unknown(e, {"box", "threshold"}, "data.enso");
        read(e, "threshold", d.enso_threshold);
        if (e.contains("box")) {
          const auto& b = e.at("box");
          reject_unknown(b, {"lon_min", "lon_max", "lat_min", "lat_max"}, "data.enso.box");
          read(b, "lon_min", d.enso_box.lon_min);
          read(b, "lon_max", d.enso_box.lon_max);
          read(b, "lat_min", d.enso_box.lat_min);
          read(b, "lat_max", d.enso_box.lat_max);
        }
      }
      if (j.contains("corrupt")) {
        const auto& c = j.at("corrupt");
        reject_unknown(c, {"sample_fraction", "pixel_fraction", "fill"}, "data.corrupt");
        read(c, "sample_fraction", d.corrupt_sample_fraction);
        read(c, "pixel_fraction", d.corrupt_pixel_fraction);
        read(c, "fill", d.corrupt_fill);
      }
    }

    if (doc.contains("train")) {
      const auto& j = doc.at("train");
      reject_unknown(j, {"hidden", "n_spin", "max_epochs", "patience", "batch_size",
                         "learning_rate", "l2_first_layer", "pid"},
                     "train");
      auto& t = cfg.train;
      read(j, "hidden", t.hidden);
      read(j, "n_spin", t.n_spin);
      read(j, "max_epochs", t.max_epochs);
      read(j, "patience", t.patience);
      read(j, "batch_size", t.batch_size);
      read(j, "learning_rate", t.learning_rate);
      read(j, "l2_first_layer", t.l2_first_layer);
      PidConfig pid = pid_of(t);
      if (j.contains("pid")) {
        const auto& p = j.at("pid");
        reject_unknown(p, {"kp", "ki", "kd", "window_batches", "alpha_min", "alpha_max"},
                       "train.pid");
        read(p, "kp", pid.kp);
        read(p, "ki", pid.ki);
        read(p, "kd", pid.kd);
        read(p, "window_batches", pid.window_batches);
        read(p, "alpha_min", pid.alpha_min);
        read(p, "alpha_max", pid.alpha_max);
      }
      t.alpha_mode = PidAlpha{pid};
    }

    if (doc.contains("models")) {
      cfg.models.clear();
      for (const auto& m : doc.at("models")) cfg.models.push_back(model_from_json(m));
    }
    if (doc.contains("evaluate")) {
      const auto& j = doc.at("evaluate");
      reject_unknown(j, {"coverage_levels", "svg"}, "evaluate");
      read(j, "coverage_levels", cfg.coverage_levels);
      read(j, "svg", cfg.svg);
    }
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path + ": " + e.what());
  }
  return config_from_json(doc);
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("out_dir");
  j.erase("jobs");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Data

namespace {

constexpr Split kSplits[] = {Split::train, Split::val, Split::test};

std::uint64_t split_stream(Split s) {
  switch (s) {
    case Split::train:
      return stream::kTrainSplit;
    case Split::val:
      return stream::kValSplit;
    case Split::test:
      return stream::kTestSplit;
  }
  return 0;
}

int split_size(const DataConfig& d, Split s) {
  return s == Split::train ? d.n_train : s == Split::val ? d.n_val : d.n_test;
}

Dataset& pick(ExperimentData& data, Split s) {
  return s == Split::train ? data.train : s == Split::val ? data.val : data.test;
}

}  // namespace

ExperimentData generate_data(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto hash = config_hash(cfg);
  const auto& d = cfg.data;
  ExperimentData out;

  if (cfg.experiment == ExperimentKind::oned) {
    for (auto s : kSplits) {
      pick(out, s) = make_1d_dataset(split_size(d, s), derive_seed(cfg.seed, split_stream(s)), s);
    }
  } else {
    const auto corr = build_correlation(d.grid, d.length_scale_km, d.nugget);
    const auto field =
        build_response(d.grid, corr, derive_seed(cfg.seed, stream::kResponse), d.response_scale);
    for (auto s : kSplits) {
      const auto split_seed = derive_seed(cfg.seed, split_stream(s));
      Dataset base = make_climate_dataset(corr, field, split_size(d, s), split_seed, s);
      if (cfg.experiment == ExperimentKind::corrupt) {
        base = corrupt_transform(base, d.corrupt_sample_fraction, d.corrupt_pixel_fraction,
                                 d.corrupt_fill, derive_seed(split_seed, stream::kCorrupt));
      } else {
        base = enso_transform(base, d.grid, d.enso_box, d.enso_threshold,
                              derive_seed(split_seed, stream::kEnsoShuffle));
      }
      pick(out, s) = std::move(base);
    }
  }

  for (auto s : kSplits) {
    Dataset& ds = pick(out, s);
    ds.config_hash = hash;
    ds.metadata = {{"experiment", to_string(cfg.experiment)}};
    switch (cfg.experiment) {
      case ExperimentKind::oned:
        ds.metadata["line_fraction"] = ds.fraction(SampleFlag::line);
        break;
      case ExperimentKind::corrupt:
        ds.metadata["corrupted_fraction"] = ds.fraction(SampleFlag::corrupted);
        ds.metadata["fill"] = d.corrupt_fill;
        break;
      default:
        ds.metadata["signal_fraction"] = ds.fraction(SampleFlag::signal);
        ds.metadata["enso_threshold"] = d.enso_threshold;
        break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run records

json to_json(const RunSummary& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j = {{"tag", r.tag},
            {"loss", to_string(r.loss)},
            {"seed", r.seed},
            {"status", r.status},
            {"config_hash", r.config_hash},
            {"metrics_path", r.metrics_path},
            {"controller_path", r.controller_path},
            {"checkpoint_path", r.checkpoint_path},
            {"best_epoch", r.best_epoch},
            {"epochs_run", r.epochs_run},
            {"best_val_loss", r.best_val_loss},
            {"realized_val_coverage", opt(r.realized_val_coverage)},
            {"kappa", opt(r.kappa)},
            {"tau", opt(r.tau)},
            {"seconds", r.seconds}};
  if (r.status != "ok") {
    j["error"] = {{"kind", r.error_kind}, {"message", r.error_message}};
  }
  return j;
}

RunSummary run_summary_from_json(const json& j) {
  try {
    auto opt = [&](const char* key) -> std::optional<double> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      return j.at(key).get<double>();
    };
    RunSummary r;
    r.tag = j.at("tag").get<std::string>();
    r.loss = parse_loss_kind(j.at("loss").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.status = j.at("status").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.metrics_path = j.value("metrics_path", "");
    r.controller_path = j.value("controller_path", "");
    r.checkpoint_path = j.value("checkpoint_path", "");
    r.best_epoch = j.value("best_epoch", -1);
    r.epochs_run = j.value("epochs_run", 0);
    r.best_val_loss = j.value("best_val_loss", 0.0);
    r.realized_val_coverage = opt("realized_val_coverage");
    r.kappa = opt("kappa");
    r.tau = opt("tau");
    r.seconds = j.value("seconds", 0.0);
    if (j.contains("error")) {
      r.error_kind = j.at("error").value("kind", "");
      r.error_message = j.at("error").value("message", "");
    }
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed run record: ") + e.what());
  }
}

void write_metrics_csv(const std::string& path, const RunRecord& record,
                       const std::string& config_hash) {
  auto out = csv::open(path, config_hash);
  out << "epoch,stage,train_loss,val_loss,val_abstention,alpha\n";
  for (const auto& e : record.epochs) {
    out << e.epoch << ',' << to_string(e.stage) << ',' << csv::num(e.train_loss) << ','
        << csv::num(e.val_loss) << ',' << csv::num(e.val_abstention) << ','
        << csv::num(e.alpha) << '\n';
  }
}

void write_controller_csv(const std::string& path, const RunRecord& record,
                          const std::string& config_hash) {
  auto out = csv::open(path, config_hash);
  out << "epoch,window,measured,error,delta_alpha,alpha\n";
  for (const auto& s : record.control_log) {
    out << s.epoch << ',' << s.window_index << ',' << csv::num(s.measured) << ','
        << csv::num(s.error) << ',' << csv::num(s.delta_alpha) << ',' << csv::num(s.alpha)
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Commands

namespace {

fs::path data_dir(const ExperimentConfig& cfg) { return fs::path(cfg.out_dir) / "data"; }

fs::path run_dir(const ExperimentConfig& cfg, const std::string& tag, std::uint64_t seed) {
  return fs::path(cfg.out_dir) / "runs" / tag / ("seed_" + std::to_string(seed));
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("cannot parse " + path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_config_snapshot(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out_dir);
  json doc = to_json(cfg);
  doc["config_hash"] = config_hash(cfg);
  write_json(fs::path(cfg.out_dir) / "config.json", doc);
}

ExperimentData load_data(const ExperimentConfig& cfg) {
  const auto dir = data_dir(cfg);
  ExperimentData data{read_dataset((dir / "train.bin").string()),
                      read_dataset((dir / "val.bin").string()),
                      read_dataset((dir / "test.bin").string())};
  const auto hash = config_hash(cfg);
  for (const Dataset* d : {&data.train, &data.val, &data.test}) {
    if (d->config_hash != hash) {
      throw ConfigError("datasets in " + dir.string() + " were generated by config " +
                        d->config_hash + ", current config is " + hash +
                        "; rerun generate with --force");
    }
  }
  return data;
}

struct RunJob {
  const ModelSpec* model;
  int member;
};

}  // namespace

std::vector<std::string> cmd_generate(const ExperimentConfig& cfg, const CommandOptions& opts) {
  cfg.validate();
  const auto dir = data_dir(cfg);
  std::vector<std::string> paths;
  for (auto s : kSplits) paths.push_back((dir / (to_string(s) + ".bin")).string());
  if (!opts.force) {
    for (const auto& p : paths) {
      if (fs::exists(p)) throw UsageError(p + " already exists; pass --force to overwrite");
    }
  }
  write_config_snapshot(cfg);
  ensure_dir(dir);
  const auto data = generate_data(cfg);
  write_dataset(data.train, paths[0]);
  write_dataset(data.val, paths[1]);
  write_dataset(data.test, paths[2]);
  return paths;
}

std::vector<RunSummary> cmd_train(const ExperimentConfig& cfg, const CommandOptions& opts) {
  cfg.validate();
  const auto hash = config_hash(cfg);
  const auto data = load_data(cfg);
  const TrainData td{data.train, data.val};

  std::vector<RunJob> jobs;
  for (const auto& m : cfg.models) {
    for (int k = 0; k < cfg.ensemble; ++k) jobs.push_back({&m, k});
  }
  if (!opts.force) {
    for (const auto& j : jobs) {
      const auto dir = run_dir(cfg, j.model->tag, cfg.seed + static_cast<std::uint64_t>(j.member));
      if (fs::exists(dir / "run.json")) {
        throw UsageError(dir.string() + " already holds a run; pass --force to overwrite");
      }
    }
  }
  write_config_snapshot(cfg);

  std::vector<RunSummary> summaries(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      TrainConfig tcfg = train_config_for(cfg, *job.model);
      tcfg.seed = cfg.seed + static_cast<std::uint64_t>(job.member);
      const auto dir = run_dir(cfg, job.model->tag, tcfg.seed);

      RunSummary& r = summaries[i];
      r.tag = job.model->tag;
      r.loss = job.model->loss;
      r.seed = tcfg.seed;
      r.config_hash = hash;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        ensure_dir(dir);
        const RunRecord rec = run_training(tcfg, td);
        r.metrics_path = "metrics.csv";
        write_metrics_csv((dir / r.metrics_path).string(), rec, hash);
        if (rec.abstention) {
          r.controller_path = "controller.csv";
          write_controller_csv((dir / r.controller_path).string(), rec, hash);
          r.kappa = rec.abstention->kappa;
          r.tau = rec.abstention->tau;
        }
        r.checkpoint_path = "checkpoint.json";
        save_checkpoint(rec.best_model, (dir / r.checkpoint_path).string(), hash);
        r.best_epoch = rec.best_epoch;
        r.epochs_run = static_cast<int>(rec.epochs.size());
        r.best_val_loss = rec.best_val_loss;
        if (rec.best_val_abstention) r.realized_val_coverage = 1.0 - *rec.best_val_abstention;
        r.status = "ok";
      } catch (const Error& e) {
        r.status = "failed";
        r.error_kind = e.kind();
        r.error_message = e.what();
      } catch (const std::exception& e) {
        r.status = "failed";
        r.error_kind = "internal_error";
        r.error_message = e.what();
      }
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      try {
        write_json(dir / "run.json", to_json(r));
      } catch (const Error& e) {
        r.status = "failed";
        r.error_kind = e.kind();
        r.error_message = e.what();
      }
    }
  };
  const int threads = std::clamp<int>(cfg.jobs, 1, static_cast<int>(jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return summaries;
}

std::vector<std::string> discover_runs(const std::string& out_dir) {
  std::vector<std::pair<std::pair<std::string, std::uint64_t>, std::string>> found;
  const auto root = fs::path(out_dir) / "runs";
  if (!fs::is_directory(root)) return {};
  for (const auto& tag_dir : fs::directory_iterator(root)) {
    if (!tag_dir.is_directory()) continue;
    for (const auto& seed_dir : fs::directory_iterator(tag_dir.path())) {
      const auto name = seed_dir.path().filename().string();
      if (!seed_dir.is_directory() || name.rfind("seed_", 0) != 0) continue;
      if (!fs::exists(seed_dir.path() / "run.json")) continue;
      found.push_back({{tag_dir.path().filename().string(), std::stoull(name.substr(5))},
                       seed_dir.path().string()});
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> dirs;
  for (auto& f : found) dirs.push_back(std::move(f.second));
  return dirs;
}

namespace {

struct EvaluatedRun {
  RunSummary summary;
  std::optional<CoverageCurve> curve;
  std::optional<SelectivePoint> point;
  std::optional<double> covered_signal_fraction;
  std::optional<double> abstained_corrupted_fraction;
  std::vector<CalibrationStats> calibration;
};

std::optional<double> share(std::size_t part, std::size_t whole) {
  if (whole == 0) return std::nullopt;
  return static_cast<double>(part) / static_cast<double>(whole);
}

void render_figures(const ExperimentConfig& cfg, const std::vector<EvaluatedRun>& runs,
                    const std::map<std::string, Envelope>& envelopes, const fs::path& dir,
                    const std::string& hash, std::vector<std::string>& written) {
  svg::Chart chart("MAE vs coverage (" + to_string(cfg.experiment) + ")", "coverage",
                   "test MAE");
  chart.set_x_range(0.0, 1.0);
  chart.add_note("config_hash=" + hash);
  std::size_t color = 0;
  for (const auto& [tag, env] : envelopes) {
    bool flat = false;
    for (const auto& r : runs) {
      if (r.summary.tag == tag && r.summary.loss == LossKind::mae) flat = true;
    }
    const auto c = flat ? std::string("#444444") : svg::palette(color++);
    if (!flat) chart.add_band({env.levels, env.min, env.max, c, tag + " range"});
    chart.add_line({env.levels, env.median, c, tag + (flat ? " (all samples)" : " median")});
  }
  std::map<std::string, svg::Series> dots;
  for (const auto& r : runs) {
    if (!r.point || !r.point->mae) continue;
    auto& s = dots[r.summary.tag];
    s.label = r.summary.tag;
    s.x.push_back(r.point->coverage);
    s.y.push_back(*r.point->mae);
  }
  for (auto& [tag, s] : dots) {
    s.color = svg::palette(color++);
    chart.add_dots(std::move(s));
  }
  const auto mae_path = (dir / "mae_vs_coverage.svg").string();
  chart.save(mae_path);
  written.push_back(mae_path);

  for (const auto& r : runs) {
    if (r.calibration.empty()) continue;
    const auto& test = r.calibration.back();
    svg::Chart hist("z-scores, " + r.summary.tag + " seed " + std::to_string(r.summary.seed) +
                        " (test): mean " + csv::num(std::round(test.mean * 1000) / 1000) +
                        ", std " + csv::num(std::round(test.std * 1000) / 1000),
                    "z = (y - mu) / sigma", "count");
    hist.add_note("config_hash=" + hash);
    svg::Bars bars;
    for (std::size_t b = 0; b < test.counts.size(); ++b) {
      bars.left.push_back(test.edges[b]);
      bars.right.push_back(test.edges[b + 1]);
      bars.height.push_back(static_cast<double>(test.counts[b]));
    }
    hist.add_bars(std::move(bars));
    const auto z_path = (dir / "zscores.svg").string();
    hist.save(z_path);
    written.push_back(z_path);
    break;
  }
}

}  // namespace

std::vector<std::string> cmd_evaluate(const ExperimentConfig& cfg,
                                      const std::vector<std::string>& run_dirs) {
  if (run_dirs.empty()) throw UsageError("no run directories to evaluate");
  cfg.validate();
  const auto hash = config_hash(cfg);
  const auto data = load_data(cfg);

  std::vector<EvaluatedRun> runs;
  json skipped = json::array();
  for (const auto& d : run_dirs) {
    const fs::path dir(d);
    EvaluatedRun ev;
    ev.summary = run_summary_from_json(read_json(dir / "run.json"));
    if (ev.summary.status != "ok") {
      skipped.push_back({{"run", d}, {"error", ev.summary.error_kind}});
      continue;
    }
    if (ev.summary.config_hash != hash) {
      throw ConfigError("run " + d + " was trained under config " + ev.summary.config_hash +
                        ", current config is " + hash);
    }
    const auto ckpt = dir / ev.summary.checkpoint_path;
    if (ev.summary.checkpoint_path.empty() || !fs::exists(ckpt)) {
      throw IoError("missing checkpoint " + ckpt.string());
    }
    const MlpModel model = load_checkpoint(ckpt.string());
    const auto& test = data.test;
    if (!model.distributional()) {
      ev.curve = flat_mae_curve(predict_mean(model, test.x), test.y, cfg.coverage_levels,
                                ev.summary.tag, ev.summary.seed);
    } else {
      const auto preds = forward(model, test.x);
      ev.curve = mae_at_coverage(preds, test.y, cfg.coverage_levels, ev.summary.tag,
                                 ev.summary.seed);
      if (ev.summary.tau) {
        ev.point = tau_point(preds, test.y, *ev.summary.tau);
        std::size_t covered = 0, covered_signal = 0, abstained = 0, abstained_corrupt = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
          if (preds[i].sigma <= *ev.summary.tau) {
            ++covered;
            covered_signal += test.flags[i] == SampleFlag::signal;
          } else {
            ++abstained;
            abstained_corrupt += test.flags[i] == SampleFlag::corrupted;
          }
        }
        if (test.count(SampleFlag::signal) > 0) {
          ev.covered_signal_fraction = share(covered_signal, covered);
        }
        if (test.count(SampleFlag::corrupted) > 0) {
          ev.abstained_corrupted_fraction = share(abstained_corrupt, abstained);
        }
      } else {
        for (const Dataset* ds : {&data.train, &data.val, &data.test}) {
          ev.calibration.push_back(zscores(forward(model, ds->x), ds->y, ds->split));
        }
      }
    }
    runs.push_back(std::move(ev));
  }
  if (runs.empty()) throw UsageError("every listed run failed; nothing to evaluate");

  const auto dir = fs::path(cfg.out_dir) / "evaluation";
  ensure_dir(dir);
  std::vector<std::string> written;

  std::vector<CoverageCurve> curves;
  std::map<std::string, std::vector<CoverageCurve>> by_tag;
  for (const auto& r : runs) {
    curves.push_back(*r.curve);
    // The CAN contributes dots, not a curve family.
    if (!r.summary.tau) by_tag[r.summary.tag].push_back(*r.curve);
  }
  const auto coverage_path = (dir / "coverage.csv").string();
  write_coverage_csv(coverage_path, curves, hash);
  written.push_back(coverage_path);

  std::map<std::string, Envelope> envelopes;
  for (const auto& [tag, group] : by_tag) {
    envelopes[tag] = ensemble_envelope(group);
    const auto p = (dir / ("envelope_" + tag + ".csv")).string();
    write_envelope_csv(p, envelopes[tag], hash);
    written.push_back(p);
  }

  const auto points_path = (dir / "can_points.csv").string();
  {
    auto out = csv::open(points_path, hash);
    out << "tag,seed,coverage,mae,n_covered,tau,covered_signal_fraction,"
           "abstained_corrupted_fraction\n";
    for (const auto& r : runs) {
      if (!r.point) continue;
      out << r.summary.tag << ',' << r.summary.seed << ',' << csv::num(r.point->coverage) << ','
          << csv::num(r.point->mae) << ',' << r.point->n_covered << ','
          << csv::num(r.summary.tau) << ',' << csv::num(r.covered_signal_fraction) << ','
          << csv::num(r.abstained_corrupted_fraction) << '\n';
    }
  }
  written.push_back(points_path);

  const auto calib_summary_path = (dir / "calibration_summary.csv").string();
  {
    auto out = csv::open(calib_summary_path, hash);
    out << "tag,seed,split,z_mean,z_std\n";
    for (const auto& r : runs) {
      for (const auto& c : r.calibration) {
        out << r.summary.tag << ',' << r.summary.seed << ',' << to_string(c.split) << ','
            << csv::num(c.mean) << ',' << csv::num(c.std) << '\n';
      }
      if (r.calibration.empty()) continue;
      const auto p = (dir / ("calibration_" + r.summary.tag + "_seed_" +
                             std::to_string(r.summary.seed) + ".csv"))
                         .string();
      write_calibration_csv(p, r.calibration, hash);
      written.push_back(p);
    }
  }
  written.push_back(calib_summary_path);

  json summary = {{"config_hash", hash},
                  {"experiment", to_string(cfg.experiment)},
                  {"runs_evaluated", runs.size()},
                  {"runs_skipped", skipped},
                  {"test_flag_fractions", describe(data.test)["flag_fractions"]}};
  json points = json::array();
  for (const auto& r : runs) {
    if (!r.point) continue;
    points.push_back({{"tag", r.summary.tag},
                      {"seed", r.summary.seed},
                      {"coverage", r.point->coverage},
                      {"mae", r.point->mae ? json(*r.point->mae) : json(nullptr)}});
  }
  summary["can_points"] = points;
  const auto summary_path = (dir / "summary.json").string();
  write_json(summary_path, summary);
  written.push_back(summary_path);

  if (cfg.svg) render_figures(cfg, runs, envelopes, dir, hash, written);
  return written;
}

json cmd_reproduce(const ExperimentConfig& cfg, const CommandOptions& opts) {
  cfg.validate();
  const auto generated = cmd_generate(cfg, opts);
  const auto runs = cmd_train(cfg, opts);
  std::vector<std::string> run_dirs;
  json failures = json::array();
  for (const auto& r : runs) {
    const auto dir = run_dir(cfg, r.tag, r.seed).string();
    if (r.status == "ok") {
      run_dirs.push_back(dir);
    } else {
      failures.push_back({{"run", dir}, {"error", r.error_kind}, {"message", r.error_message}});
    }
  }
  if (run_dirs.empty()) throw TrainingDiverged("every run failed; see run.json files");
  const auto evaluated = cmd_evaluate(cfg, run_dirs);
  return {{"config_hash", config_hash(cfg)},
          {"out_dir", cfg.out_dir},
          {"datasets", generated},
          {"runs_ok", run_dirs.size()},
          {"runs_failed", failures},
          {"evaluation", evaluated}};
}

}  // namespace can
