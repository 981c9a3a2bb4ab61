#include <benchmark/benchmark.h>

#include <random>

#include "can/controller.hpp"
#include "can/evaluate.hpp"
#include "can/loss.hpp"
#include "can/net.hpp"
#include "can/synthdata.hpp"

namespace {

can::Matrix random_batch(int n, int features, std::uint64_t seed) {
  can::Rng rng(seed);
  std::normal_distribution<double> normal;
  can::Matrix x(n, features);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  return x;
}

can::MlpModel climate_model() {
  can::Rng rng(1);
  return can::MlpModel::glorot(can::dense_architecture(900, {50, 25}, 2), rng);
}

const can::CorrelationModel& correlation() {
  static const auto c = can::build_correlation(can::GridSpec{}, 2500.0, 1e-6);
  return c;
}

void BM_Forward(benchmark::State& state) {
  const auto model = climate_model();
  const auto x = random_batch(static_cast<int>(state.range(0)), 900, 2);
  for (auto _ : state) benchmark::DoNotOptimize(can::forward(model, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(5000);

// One optimizer step on a minibatch: forward, abstention loss, backward, Adam.
void BM_TrainStep(benchmark::State& state) {
  auto model = climate_model();
  auto opt = can::OptimizerState::adam(model, 5e-4);
  const auto x = random_batch(32, 900, 3);
  std::vector<double> y(32, 0.5);
  const can::AbstentionParams params{0.1, 1.0};
  for (auto _ : state) {
    const auto pass = can::forward_pass(model, x);
    const auto loss = can::batch_loss(can::LossKind::abstention, y, can::predictions(pass), &params);
    can::optimizer_step(opt, model, can::backward(model, pass, loss.grads));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep);

void BM_BatchLoss(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  can::Rng rng(4);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> pos(0.1, 3.0);
  std::vector<double> y(n);
  std::vector<can::PredictionPair> preds(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = normal(rng);
    preds[i] = {normal(rng), pos(rng)};
  }
  const can::AbstentionParams params{0.1, 1.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(can::batch_loss(can::LossKind::abstention, y, preds, &params));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BatchLoss)->Arg(32)->Arg(5000);

void BM_PidUpdate(benchmark::State& state) {
  can::PidConfig cfg;
  can::PidState s;
  double measured = 0.4;
  for (auto _ : state) {
    s = can::pid_update(s, cfg, measured);
    measured = measured > 0.5 ? 0.4 : 0.6;
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_PidUpdate);

void BM_SampleSstFields(benchmark::State& state) {
  const auto& corr = correlation();
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(can::sample_sst_fields(corr, static_cast<int>(state.range(0)), ++seed));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SampleSstFields)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_GlobalResponse(benchmark::State& state) {
  const auto& corr = correlation();
  const auto field = can::build_response(can::GridSpec{}, corr, 5);
  const auto maps = can::sample_sst_fields(corr, 1000, 6);
  for (auto _ : state) benchmark::DoNotOptimize(can::global_response(field, maps));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_GlobalResponse)->Unit(benchmark::kMillisecond);

void BM_BuildCorrelation(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(can::build_correlation(can::GridSpec{}, 2500.0, 1e-6));
  }
}
BENCHMARK(BM_BuildCorrelation)->Unit(benchmark::kMillisecond);

void BM_CoverageCurve(benchmark::State& state) {
  can::Rng rng(7);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> pos(0.1, 3.0);
  std::vector<can::PredictionPair> preds(5000);
  std::vector<double> y(5000);
  for (std::size_t i = 0; i < y.size(); ++i) {
    preds[i] = {normal(rng), pos(rng)};
    y[i] = normal(rng);
  }
  const auto levels = can::default_coverage_levels();
  for (auto _ : state) benchmark::DoNotOptimize(can::mae_at_coverage(preds, y, levels));
}
BENCHMARK(BM_CoverageCurve);

}  // namespace

BENCHMARK_MAIN();
