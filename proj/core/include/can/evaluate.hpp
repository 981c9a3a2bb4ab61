#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "can/net.hpp"
#include "can/synthdata.hpp"

namespace can {

// Indices of the ceil(coverage * n) smallest sigmas; ties go to the lower
// index. The result is sorted by (sigma, index).
std::vector<std::size_t> threshold_coverage(std::span<const PredictionPair> preds,
                                            double coverage);

// Indices with sigma <= tau, in index order.
std::vector<std::size_t> tau_coverage(std::span<const PredictionPair> preds, double tau);

double mean_absolute_error(std::span<const PredictionPair> preds, std::span<const double> y,
                           std::span<const std::size_t> indices);

struct CoverageCurve {
  std::vector<double> levels;
  std::vector<std::optional<double>> mae;  // absent when a level covers nothing
  std::vector<std::size_t> n_covered;
  std::string tag;
  std::uint64_t seed = 0;
};

// Coverage levels 0.05, 0.10, ..., 1.00.
std::vector<double> default_coverage_levels();

CoverageCurve mae_at_coverage(std::span<const PredictionPair> preds, std::span<const double> y,
                              std::span<const double> levels, std::string tag = "baseline",
                              std::uint64_t seed = 0);

// Models without a sigma head have a single summary MAE, repeated at every
// level.
CoverageCurve flat_mae_curve(std::span<const double> mu, std::span<const double> y,
                             std::span<const double> levels, std::string tag = "mae",
                             std::uint64_t seed = 0);

// The single point an abstention network contributes: its realized coverage
// under sigma <= tau and the MAE on the covered samples.
struct SelectivePoint {
  double coverage = 0.0;
  std::optional<double> mae;
  std::size_t n_covered = 0;
};

SelectivePoint tau_point(std::span<const PredictionPair> preds, std::span<const double> y,
                         double tau);

inline constexpr double kHistogramMin = -5.0;
inline constexpr double kHistogramMax = 5.0;
inline constexpr int kHistogramBins = 50;

struct CalibrationStats {
  std::vector<double> z;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::vector<double> edges;          // kHistogramBins + 1 edges over [-5, 5]
  std::vector<std::size_t> counts;    // kHistogramBins half-open bins
  std::size_t underflow = 0;          // z < -5
  std::size_t overflow = 0;           // z >= 5
  Split split = Split::test;
};

// z_i = (y_i - mu_i) / sigma_i with summary moments and a fixed histogram.
CalibrationStats zscores(std::span<const PredictionPair> preds, std::span<const double> y,
                         Split split = Split::test);

struct Envelope {
  std::vector<double> levels;
  std::vector<double> min;
  std::vector<double> median;
  std::vector<double> max;
};

// Pointwise min / median / max over curves sharing coverage levels. Absent
// entries are skipped; a level absent in every curve is an AlignmentError.
Envelope ensemble_envelope(std::span<const CoverageCurve> curves);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

// CSV tables. Each file starts with a `# config_hash=<hash>` comment line.
void write_coverage_csv(const std::string& path, std::span<const CoverageCurve> curves,
                        const std::string& config_hash);
void write_envelope_csv(const std::string& path, const Envelope& env,
                        const std::string& config_hash);
void write_calibration_csv(const std::string& path, std::span<const CalibrationStats> stats,
                           const std::string& config_hash);

}  // namespace can
