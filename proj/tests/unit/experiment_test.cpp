#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "can/error.hpp"
#include "can/experiment.hpp"

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// A few-second oned experiment.
can::ExperimentConfig tiny_oned(const fs::path& out) {
  auto cfg = can::default_config(can::ExperimentKind::oned);
  cfg.data.n_train = 300;
  cfg.data.n_val = 100;
  cfg.data.n_test = 100;
  cfg.train.n_spin = 5;
  cfg.train.max_epochs = 25;
  cfg.train.patience = 10;
  cfg.train.learning_rate = 5e-3;
  cfg.ensemble = 2;
  cfg.out_dir = out.string();
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

TEST(ExperimentConfig, BuiltInDefaults) {
  const auto oned = can::default_config(can::ExperimentKind::oned);
  EXPECT_EQ(oned.data.n_train, 3000);
  EXPECT_EQ(oned.data.n_val, 1000);
  EXPECT_EQ(oned.train.hidden, std::vector<int>({5, 5}));
  EXPECT_EQ(oned.train.n_spin, 225);
  EXPECT_EQ(oned.train.learning_rate, 1e-4);
  EXPECT_EQ(oned.models.at(1).alpha, 0.1);

  const auto enso = can::default_config(can::ExperimentKind::enso_const);
  EXPECT_EQ(enso.data.n_train, 8000);
  EXPECT_EQ(enso.data.n_val, 5000);
  EXPECT_EQ(enso.data.n_test, 5000);
  EXPECT_EQ(enso.train.hidden, std::vector<int>({50, 25}));
  EXPECT_EQ(enso.train.learning_rate, 5e-4);
  EXPECT_EQ(enso.train.batch_size, 32);
  EXPECT_EQ(enso.train.n_spin, 15);
  EXPECT_EQ(enso.ensemble, 20);

  EXPECT_EQ(can::default_config(can::ExperimentKind::corrupt).models.at(1).alpha, 0.05);
  const auto pid = can::default_config(can::ExperimentKind::enso_pid);
  ASSERT_EQ(pid.models.size(), 10u);
  for (int m = 10; m <= 90; m += 10) {
    EXPECT_EQ(pid.models.at(static_cast<std::size_t>(m / 10)).coverage_setpoint_percent, m);
  }
}

TEST(ExperimentConfig, JsonRoundTripIsLossless) {
  for (auto kind : {can::ExperimentKind::oned, can::ExperimentKind::enso_pid,
                    can::ExperimentKind::enso_const, can::ExperimentKind::corrupt}) {
    auto cfg = can::default_config(kind);
    cfg.seed = 17;
    cfg.data.enso_threshold = 0.45;
    const auto j = can::to_json(cfg);
    const auto back = can::config_from_json(j);
    EXPECT_EQ(can::to_json(back), j);
    EXPECT_EQ(can::config_hash(back), can::config_hash(cfg));
  }
}

TEST(ExperimentConfig, HashIgnoresOutDirAndJobs) {
  auto a = can::default_config(can::ExperimentKind::corrupt);
  auto b = a;
  b.out_dir = "/elsewhere";
  b.jobs = 4;
  EXPECT_EQ(can::config_hash(a), can::config_hash(b));
  EXPECT_EQ(can::config_hash(a).size(), 16u);
  b.seed = 1;
  EXPECT_NE(can::config_hash(a), can::config_hash(b));
}

TEST(ExperimentConfig, RejectsUnknownKeysAndBadModels) {
  auto j = can::to_json(can::default_config(can::ExperimentKind::oned));
  j["train"]["learning_rte"] = 0.1;
  EXPECT_THROW(can::config_from_json(j), can::ConfigError);

  auto k = can::to_json(can::default_config(can::ExperimentKind::oned));
  k["models"] = {{{"tag", "can"}, {"loss", "abstention"}}};
  EXPECT_THROW(can::config_from_json(k), can::ConfigError);

  auto e = can::to_json(can::default_config(can::ExperimentKind::oned));
  e["experiment"] = "twod";
  EXPECT_THROW(can::config_from_json(e), can::ConfigError);
}

TEST(ExperimentConfig, PartialConfigTakesDefaults) {
  const auto cfg = can::config_from_json({{"experiment", "corrupt"}, {"seed", 3}});
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.data.corrupt_pixel_fraction, 0.66);
  EXPECT_EQ(cfg.models.size(), 2u);
}

TEST(TrainConfigFor, SetsLossAndAlphaMode) {
  const auto cfg = can::default_config(can::ExperimentKind::enso_pid);
  const auto base = can::train_config_for(cfg, cfg.models[0]);
  EXPECT_EQ(base.loss_kind, can::LossKind::gaussian_nll);
  const auto pid = can::train_config_for(cfg, cfg.models[3]);
  EXPECT_TRUE(pid.pid_mode());
  EXPECT_EQ(pid.coverage_setpoint_percent, 30);
  const auto oned = can::default_config(can::ExperimentKind::oned);
  const auto c = can::train_config_for(oned, oned.models[1]);
  EXPECT_FALSE(c.pid_mode());
  EXPECT_EQ(std::get<can::ConstantAlpha>(c.alpha_mode).alpha, 0.1);
}

TEST(GenerateData, MetadataRecordsFlagFractions) {
  auto enso = can::default_config(can::ExperimentKind::enso_const);
  enso.data.n_train = 400;
  enso.data.n_val = 50;
  enso.data.n_test = 50;
  const auto d = can::generate_data(enso);
  EXPECT_EQ(d.train.size(), 400u);
  EXPECT_EQ(d.train.metadata.at("signal_fraction"), d.train.fraction(can::SampleFlag::signal));
  EXPECT_EQ(d.train.config_hash, can::config_hash(enso));

  auto corrupt = enso;
  corrupt.experiment = can::ExperimentKind::corrupt;
  const auto c = can::generate_data(corrupt);
  EXPECT_DOUBLE_EQ(c.train.metadata.at("corrupted_fraction").get<double>(), 0.30);
  // Same clean maps underneath: the uncorrupted samples match the ENSO inputs.
  for (std::size_t i = 0; i < c.train.size(); ++i) {
    if (c.train.flags[i] == can::SampleFlag::clean) {
      const auto r = static_cast<Eigen::Index>(i);
      EXPECT_TRUE(c.train.x.row(r) == d.train.x.row(r));
    }
  }
}

TEST(Commands, GenerateIsByteIdenticalAndRefusesOverwrite) {
  const auto a = fresh_dir("can_gen_a");
  const auto b = fresh_dir("can_gen_b");
  auto cfg = tiny_oned(a);
  can::cmd_generate(cfg, {});
  EXPECT_THROW(can::cmd_generate(cfg, {}), can::UsageError);
  EXPECT_NO_THROW(can::cmd_generate(cfg, {true}));
  cfg.out_dir = b.string();
  can::cmd_generate(cfg, {});
  for (const char* f : {"train.bin", "val.bin", "test.bin"}) {
    EXPECT_EQ(slurp(a / "data" / f), slurp(b / "data" / f)) << f;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Commands, TrainEvaluateLayoutAndHashPropagation) {
  const auto dir = fresh_dir("can_pipeline");
  const auto cfg = tiny_oned(dir);
  const auto hash = can::config_hash(cfg);
  can::cmd_generate(cfg, {});
  const auto runs = can::cmd_train(cfg, {});
  ASSERT_EQ(runs.size(), 6u);
  for (const auto& r : runs) {
    EXPECT_EQ(r.status, "ok") << r.tag << " " << r.error_message;
    const auto rd = dir / "runs" / r.tag / ("seed_" + std::to_string(r.seed));
    for (const char* f : {"run.json", "metrics.csv", "checkpoint.json"}) {
      ASSERT_TRUE(fs::exists(rd / f)) << rd / f;
      EXPECT_NE(slurp(rd / f).find(hash), std::string::npos) << rd / f;
    }
    EXPECT_EQ(slurp(rd / "metrics.csv").find("epoch,stage,train_loss,val_loss,val_abstention,alpha"),
              slurp(rd / "metrics.csv").find('\n') + 1);
  }
  EXPECT_THROW(can::cmd_train(cfg, {}), can::UsageError);

  const auto found = can::discover_runs(cfg.out_dir);
  ASSERT_EQ(found.size(), 6u);
  const auto written = can::cmd_evaluate(cfg, found);
  for (const auto& p : written) {
    EXPECT_NE(slurp(p).find(hash), std::string::npos) << p;
  }
  const auto points = slurp(dir / "evaluation" / "can_points.csv");
  EXPECT_NE(points.find("\ncan,0,"), std::string::npos);
  EXPECT_NE(points.find("\ncan,1,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "evaluation" / "envelope_baseline.csv"));
  EXPECT_TRUE(fs::exists(dir / "evaluation" / "mae_vs_coverage.svg"));
  fs::remove_all(dir);
}

TEST(Commands, EvaluateErrors) {
  const auto dir = fresh_dir("can_eval_errors");
  const auto cfg = tiny_oned(dir);
  EXPECT_THROW(can::cmd_evaluate(cfg, {}), can::UsageError);

  can::cmd_generate(cfg, {});
  auto one = cfg;
  one.ensemble = 1;
  one.models.resize(1);
  // Training under a different config must not mix with these datasets.
  EXPECT_THROW(can::cmd_train(one, {}), can::ConfigError);

  const auto runs = can::cmd_train(cfg, {});
  const auto rd = dir / "runs" / "baseline" / "seed_0";
  fs::remove(rd / "checkpoint.json");
  try {
    can::cmd_evaluate(cfg, {rd.string()});
    FAIL() << "expected IoError";
  } catch (const can::IoError& e) {
    EXPECT_NE(std::string(e.what()).find("checkpoint"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Commands, FailedRunIsRecordedAndSkipped) {
  const auto dir = fresh_dir("can_failed_run");
  auto cfg = tiny_oned(dir);
  cfg.ensemble = 1;
  // n_spin == max_epochs leaves no abstention epoch to select.
  cfg.train.n_spin = 25;
  can::cmd_generate(cfg, {});
  const auto runs = can::cmd_train(cfg, {});
  int failed = 0;
  for (const auto& r : runs) {
    if (r.tag == "can") {
      EXPECT_EQ(r.status, "failed");
      EXPECT_EQ(r.error_kind, "setpoint_unreachable");
      ++failed;
    } else {
      EXPECT_EQ(r.status, "ok");
    }
  }
  EXPECT_EQ(failed, 1);
  const auto written = can::cmd_evaluate(cfg, can::discover_runs(cfg.out_dir));
  EXPECT_NE(slurp(dir / "evaluation" / "summary.json").find("setpoint_unreachable"),
            std::string::npos);
  fs::remove_all(dir);
}

TEST(RunSummary, JsonRoundTrip) {
  can::RunSummary r;
  r.tag = "can";
  r.loss = can::LossKind::abstention;
  r.seed = 4;
  r.status = "ok";
  r.config_hash = "abc";
  r.tau = 0.5;
  const auto back = can::run_summary_from_json(can::to_json(r));
  EXPECT_EQ(back.tag, "can");
  EXPECT_EQ(back.loss, can::LossKind::abstention);
  EXPECT_EQ(back.tau, 0.5);
  EXPECT_FALSE(back.kappa.has_value());
}

}  // namespace
