// Command-line front end: generate / train / evaluate / reproduce experiments
// and inspect dataset files. Failures print one JSON object on stderr and
// exit nonzero.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "can/error.hpp"
#include "can/experiment.hpp"
#include "can/synthdata.hpp"

namespace {

using nlohmann::json;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<int> ensemble;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, Overrides& o, bool training) {
  cmd->add_option("--config", o.config, "experiment config (JSON)");
  cmd->add_option("--seed", o.seed, "base seed; ensemble member k uses seed + k");
  cmd->add_option("--out", o.out, "output directory");
  if (training) {
    cmd->add_option("--jobs", o.jobs, "parallel training runs")->check(CLI::PositiveNumber);
    cmd->add_option("--ensemble", o.ensemble, "models per configuration")
        ->check(CLI::PositiveNumber);
  }
  cmd->add_flag("--force", o.force, "overwrite existing outputs");
}

can::ExperimentConfig apply(can::ExperimentConfig cfg, const Overrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.ensemble) cfg.ensemble = *o.ensemble;
  if (!o.out.empty()) cfg.out_dir = o.out;
  cfg.validate();
  return cfg;
}

// --config wins; otherwise fall back to the snapshot in --out.
can::ExperimentConfig resolve(const Overrides& o) {
  if (!o.config.empty()) return apply(can::load_config(o.config), o);
  if (!o.out.empty()) {
    const auto snapshot = std::filesystem::path(o.out) / "config.json";
    if (std::filesystem::exists(snapshot)) return apply(can::load_config(snapshot.string()), o);
  }
  throw can::UsageError("pass --config, or --out pointing at a directory with config.json");
}

json error_json(const std::string& kind, const std::string& message) {
  return {{"error", kind}, {"message", message}};
}

int fail(const json& err) {
  std::cerr << err.dump() << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controlled-abstention regression networks: data, training, evaluation"};
  app.require_subcommand(1);

  Overrides gen_o, train_o, eval_o, repro_o;
  auto* gen = app.add_subcommand("generate", "write train/val/test datasets");
  add_common(gen, gen_o, false);

  auto* train = app.add_subcommand("train", "train every configured model ensemble");
  add_common(train, train_o, true);

  auto* eval = app.add_subcommand("evaluate", "coverage curves, calibration and figures");
  add_common(eval, eval_o, false);
  std::vector<std::string> eval_runs;
  bool eval_all = false;
  eval->add_option("runs", eval_runs, "run directories (runs/<tag>/seed_<k>)");
  eval->add_flag("--all", eval_all, "evaluate every run found under --out/runs");

  auto* repro = app.add_subcommand("reproduce", "generate, train and evaluate with defaults");
  add_common(repro, repro_o, true);
  std::string experiment;
  repro->add_option("experiment", experiment, "oned, enso_pid, enso_const or corrupt")
      ->required();

  auto* synth = app.add_subcommand("synthdata", "dataset utilities");
  synth->require_subcommand(1);
  auto* describe = synth->add_subcommand("describe", "summary statistics of a dataset file");
  std::string dataset_path;
  describe->add_option("file", dataset_path, "dataset file")->required();

  auto* show = app.add_subcommand("config", "print an experiment's default config");
  std::string show_experiment;
  show->add_option("experiment", show_experiment, "oned, enso_pid, enso_const or corrupt")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(error_json("usage_error", e.what()));
  }

  try {
    if (*gen) {
      const auto cfg = resolve(gen_o);
      const auto paths = can::cmd_generate(cfg, {gen_o.force});
      json out = {{"config_hash", can::config_hash(cfg)}, {"datasets", paths}};
      for (const auto& p : paths) out["describe"].push_back(can::describe(can::read_dataset(p)));
      std::cout << out.dump(2) << '\n';
    } else if (*train) {
      const auto cfg = resolve(train_o);
      const auto runs = can::cmd_train(cfg, {train_o.force});
      json out = {{"config_hash", can::config_hash(cfg)}, {"runs", json::array()}};
      int failed = 0;
      for (const auto& r : runs) {
        out["runs"].push_back(can::to_json(r));
        failed += r.status != "ok";
      }
      std::cout << out.dump(2) << '\n';
      // Sibling runs finish regardless; the exit code reports partial failure.
      if (failed == static_cast<int>(runs.size())) return 1;
      if (failed > 0) return 3;
    } else if (*eval) {
      const auto cfg = resolve(eval_o);
      if (eval_all) {
        const auto found = can::discover_runs(cfg.out_dir);
        eval_runs.insert(eval_runs.end(), found.begin(), found.end());
      }
      const auto written = can::cmd_evaluate(cfg, eval_runs);
      std::cout << json{{"config_hash", can::config_hash(cfg)}, {"written", written}}.dump(2)
                << '\n';
    } else if (*repro) {
      auto cfg = can::default_config(can::parse_experiment_kind(experiment));
      if (!repro_o.config.empty()) {
        cfg = can::load_config(repro_o.config);
        if (cfg.experiment != can::parse_experiment_kind(experiment)) {
          throw can::UsageError("config is for experiment '" + can::to_string(cfg.experiment) +
                                "', not '" + experiment + "'");
        }
      }
      cfg = apply(cfg, repro_o);
      std::cout << can::cmd_reproduce(cfg, {repro_o.force}).dump(2) << '\n';
    } else if (*describe) {
      std::cout << can::describe(can::read_dataset(dataset_path)).dump(2) << '\n';
    } else if (*show) {
      std::cout << can::to_json(can::default_config(can::parse_experiment_kind(show_experiment)))
                       .dump(2)
                << '\n';
    }
  } catch (const can::SetpointUnreachable& e) {
    auto err = error_json(e.kind(), e.what());
    err["closest_fraction"] = e.closest_fraction();
    return fail(err);
  } catch (const can::NuggetError& e) {
    auto err = error_json(e.kind(), e.what());
    err["suggested_nugget"] = e.suggested_nugget();
    return fail(err);
  } catch (const can::NumericError& e) {
    auto err = error_json(e.kind(), e.what());
    err["sample_index"] = e.sample_index();
    return fail(err);
  } catch (const can::Error& e) {
    return fail(error_json(e.kind(), e.what()));
  } catch (const std::exception& e) {
    return fail(error_json("internal_error", e.what()));
  }
  return 0;
}
