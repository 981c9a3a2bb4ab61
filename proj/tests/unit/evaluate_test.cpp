#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "can/error.hpp"
#include "can/evaluate.hpp"
#include "can/svg.hpp"

namespace {

using can::PredictionPair;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(ThresholdCoverage, SmallestSigmasWithIndexTieBreak) {
  std::vector<PredictionPair> p = {{0, 3}, {0, 1}, {0, 2}};
  EXPECT_EQ(can::threshold_coverage(p, 1.0 / 3.0), std::vector<std::size_t>({1}));
  EXPECT_EQ(can::threshold_coverage(p, 1.0).size(), 3u);
  std::vector<PredictionPair> ties = {{0, 1}, {0, 1}, {0, 1}, {0, 0.5}};
  EXPECT_EQ(can::threshold_coverage(ties, 0.5), std::vector<std::size_t>({3, 0}));
  // 0.3 * 10 must not round up to 4.
  std::vector<PredictionPair> ten(10);
  EXPECT_EQ(can::threshold_coverage(ten, 0.3).size(), 3u);
  EXPECT_THROW(can::threshold_coverage(p, 0.0), can::DomainError);
}

TEST(ThresholdCoverage, TwentyPercentMatchesPercentileThreshold) {
  can::Rng rng(1);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  std::vector<PredictionPair> p(1000);
  for (auto& x : p) x.sigma = u(rng);
  const auto covered = can::threshold_coverage(p, 0.2);
  std::vector<double> s;
  for (const auto& x : p) s.push_back(x.sigma);
  std::sort(s.begin(), s.end());
  const double cut = s[199];
  for (auto i : covered) EXPECT_LE(p[i].sigma, cut);
  EXPECT_EQ(covered.size(), 200u);
}

TEST(MaeAtCoverage, PerfectPredictionsAreZero) {
  std::vector<PredictionPair> p = {{1, 1}, {2, 3}, {3, 2}};
  std::vector<double> y = {1, 2, 3};
  const auto c = can::mae_at_coverage(p, y, can::default_coverage_levels());
  for (const auto& m : c.mae) {
    if (m) EXPECT_EQ(*m, 0.0);
  }
}

TEST(MaeAtCoverage, RankCorrelatedSigmaGivesMonotoneCurve) {
  can::Rng rng(2);
  std::normal_distribution<double> n;
  std::vector<PredictionPair> p(500);
  std::vector<double> y(500);
  for (std::size_t i = 0; i < p.size(); ++i) {
    y[i] = n(rng);
    p[i].mu = 0.0;
    p[i].sigma = std::abs(y[i]) + 0.01;
  }
  const auto c = can::mae_at_coverage(p, y, can::default_coverage_levels());
  ASSERT_EQ(c.levels.size(), 20u);
  EXPECT_DOUBLE_EQ(c.levels.front(), 0.05);
  EXPECT_DOUBLE_EQ(c.levels.back(), 1.0);
  for (std::size_t k = 1; k < c.mae.size(); ++k) EXPECT_GE(*c.mae[k], *c.mae[k - 1]);
  EXPECT_EQ(c.n_covered.back(), 500u);
}

TEST(MaeAtCoverage, TinyLevelCoversOneSample) {
  std::vector<PredictionPair> p = {{0, 1}, {0, 2}};
  std::vector<double> y = {1, 1};
  std::vector<double> levels = {0.0000001, 1.0};
  const auto c = can::mae_at_coverage(p, y, levels);
  EXPECT_EQ(c.n_covered[0], 1u);  // ceil rounds any positive level up to one sample
  std::vector<double> bad = {0.5, 0.4};
  EXPECT_THROW(can::mae_at_coverage(p, y, bad), can::DomainError);
}

TEST(FlatCurve, MaeModelIsFlat) {
  std::vector<double> mu = {0, 0, 0, 0};
  std::vector<double> y = {1, -1, 2, 0};
  const auto c = can::flat_mae_curve(mu, y, can::default_coverage_levels(), "mae", 3);
  for (const auto& m : c.mae) EXPECT_DOUBLE_EQ(*m, 1.0);
  EXPECT_EQ(c.seed, 3u);
}

TEST(TauPoint, CoverageAndMae) {
  std::vector<PredictionPair> p = {{0, 0.5}, {0, 2.0}, {0, 1.0}, {0, 3.0}};
  std::vector<double> y = {1, 5, 3, 7};
  const auto pt = can::tau_point(p, y, 1.0);
  EXPECT_DOUBLE_EQ(pt.coverage, 0.5);
  EXPECT_EQ(pt.n_covered, 2u);
  EXPECT_DOUBLE_EQ(*pt.mae, 2.0);
  EXPECT_FALSE(can::tau_point(p, y, 0.1).mae.has_value());
}

TEST(Zscores, PerfectPredictionsAreZero) {
  std::vector<PredictionPair> p = {{1, 1}, {2, 3}};
  std::vector<double> y = {1, 2};
  const auto s = can::zscores(p, y);
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.std, 0.0);
  EXPECT_EQ(s.edges.size(), 51u);
  EXPECT_EQ(s.counts[25], 2u);
}

TEST(Zscores, MonteCarloCalibratedDraws) {
  can::Rng rng(3);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.2, 3.0);
  std::vector<PredictionPair> p(10000);
  std::vector<double> y(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = {n(rng), u(rng)};
    y[i] = p[i].mu + p[i].sigma * n(rng);
  }
  const auto s = can::zscores(p, y, can::Split::val);
  EXPECT_NEAR(s.mean, 0.0, 0.05);
  EXPECT_NEAR(s.std, 1.0, 0.05);
  std::size_t total = s.underflow + s.overflow;
  for (auto c : s.counts) total += c;
  EXPECT_EQ(total, 10000u);
}

TEST(Zscores, InvariantUnderJointAffineRescaling) {
  std::vector<PredictionPair> p = {{0.5, 0.8}, {-1.0, 2.0}, {3.0, 0.3}};
  std::vector<double> y = {1.0, -2.5, 2.9};
  const auto a = can::zscores(p, y);
  for (auto& x : p) {
    x.mu = 4.0 * x.mu + 1.0;
    x.sigma *= 4.0;
  }
  for (auto& v : y) v = 4.0 * v + 1.0;
  const auto b = can::zscores(p, y);
  for (std::size_t i = 0; i < a.z.size(); ++i) EXPECT_NEAR(a.z[i], b.z[i], 1e-12);
}

TEST(Zscores, OutOfRangeGoesToOverflowBins) {
  std::vector<PredictionPair> p = {{0, 1}, {0, 1}, {0, 1}};
  std::vector<double> y = {-9, 5.0, 9};
  const auto s = can::zscores(p, y);
  EXPECT_EQ(s.underflow, 1u);
  EXPECT_EQ(s.overflow, 2u);
}

can::CoverageCurve constant_curve(double v, const std::string& tag) {
  can::CoverageCurve c;
  c.levels = {0.5, 1.0};
  c.mae = {v, v};
  c.n_covered = {1, 2};
  c.tag = tag;
  return c;
}

TEST(Envelope, ThreeConstantCurves) {
  std::vector<can::CoverageCurve> curves = {constant_curve(4, "a"), constant_curve(1, "b"),
                                            constant_curve(2, "c")};
  const auto env = can::ensemble_envelope(curves);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(env.min[k], 1.0);
    EXPECT_EQ(env.median[k], 2.0);
    EXPECT_EQ(env.max[k], 4.0);
  }
}

TEST(Envelope, SingleCurveAndMisalignment) {
  std::vector<can::CoverageCurve> one = {constant_curve(3, "a")};
  const auto env = can::ensemble_envelope(one);
  EXPECT_EQ(env.min, env.max);
  EXPECT_EQ(env.median, env.max);
  auto other = constant_curve(1, "b");
  other.levels = {0.4, 1.0};
  std::vector<can::CoverageCurve> mixed = {constant_curve(3, "a"), other};
  EXPECT_THROW(can::ensemble_envelope(mixed), can::AlignmentError);
  EXPECT_THROW(can::ensemble_envelope(std::vector<can::CoverageCurve>{}), can::AlignmentError);
}

TEST(Spearman, RanksAndTies) {
  std::vector<double> a = {1, 2, 3, 4};
  std::vector<double> b = {10, 20, 30, 40};
  std::vector<double> c = {4, 3, 2, 1};
  EXPECT_NEAR(can::spearman(a, b), 1.0, 1e-12);
  EXPECT_NEAR(can::spearman(a, c), -1.0, 1e-12);
  std::vector<double> tied = {1, 1, 2, 2};
  EXPECT_GT(can::spearman(a, tied), 0.8);
}

TEST(Csv, FilesCarryConfigHash) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "can_cov.csv").string();
  std::vector<can::CoverageCurve> curves = {constant_curve(1.5, "baseline")};
  can::write_coverage_csv(path, curves, "0123abcd");
  const auto text = slurp(path);
  EXPECT_EQ(text.rfind("# config_hash=0123abcd\ncoverage,mae,n_covered,tag,seed\n", 0), 0u);
  EXPECT_NE(text.find("0.5,1.5,1,baseline,0"), std::string::npos);

  std::vector<PredictionPair> p = {{0, 1}};
  std::vector<double> y = {0.05};
  std::vector<can::CalibrationStats> stats = {can::zscores(p, y)};
  can::write_calibration_csv(path, stats, "h");
  const auto calib = slurp(path);
  EXPECT_NE(calib.find("bin_left,bin_right,count,split"), std::string::npos);
  EXPECT_NE(calib.find("-inf,-5,0,test"), std::string::npos);
  EXPECT_NE(calib.find(",1,test\n"), std::string::npos);
  std::filesystem::remove(path);
}

TEST(Svg, RendersBandLineDotsAndBars) {
  can::svg::Chart chart("t", "x", "y");
  chart.add_band({{0, 1}, {0, 0}, {1, 2}, "#aaaaaa", "range"});
  chart.add_line({{0, 1}, {0.5, 1.5}, "#000000", "median"});
  chart.add_dots({{0.3}, {1.0}, "#ff0000", "can"});
  chart.add_bars({{0}, {1}, {3}, "#00ff00", ""});
  chart.add_note("config_hash=abc");
  const auto s = chart.render();
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("<polygon"), std::string::npos);
  EXPECT_NE(s.find("<polyline"), std::string::npos);
  EXPECT_NE(s.find("<circle"), std::string::npos);
  EXPECT_NE(s.find("config_hash=abc"), std::string::npos);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
}

}  // namespace
