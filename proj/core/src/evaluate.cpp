#include "can/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "can/csv.hpp"
#include "can/error.hpp"

namespace can {

std::vector<std::size_t> threshold_coverage(std::span<const PredictionPair> preds,
                                            double coverage) {
  if (preds.empty()) throw DomainError("no predictions to threshold");
  if (!(coverage > 0.0 && coverage <= 1.0)) throw DomainError("coverage must lie in (0, 1]");
  const auto n = preds.size();
  // The epsilon keeps e.g. 0.3 * 10 from rounding up to 4.
  const auto k = std::min(
      n, static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].sigma < preds[b].sigma;
  });
  order.resize(k);
  return order;
}

std::vector<std::size_t> tau_coverage(std::span<const PredictionPair> preds, double tau) {
  std::vector<std::size_t> covered;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].sigma <= tau) covered.push_back(i);
  }
  return covered;
}

double mean_absolute_error(std::span<const PredictionPair> preds, std::span<const double> y,
                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw DomainError("MAE over an empty set");
  double total = 0.0;
  for (auto i : indices) total += std::abs(y[i] - preds[i].mu);
  return total / static_cast<double>(indices.size());
}

std::vector<double> default_coverage_levels() {
  std::vector<double> levels;
  for (int k = 1; k <= 20; ++k) levels.push_back(k / 20.0);
  return levels;
}

namespace {

void check_sizes(std::size_t preds, std::size_t y) {
  if (preds != y) {
    throw DimensionError(std::to_string(preds) + " predictions for " + std::to_string(y) +
                         " targets");
  }
}

void check_levels(std::span<const double> levels) {
  if (levels.empty()) throw DomainError("coverage levels must be non-empty");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (!(levels[k] > 0.0 && levels[k] <= 1.0)) {
      throw DomainError("coverage levels must lie in (0, 1]");
    }
    if (k > 0 && !(levels[k] > levels[k - 1])) {
      throw DomainError("coverage levels must be strictly increasing");
    }
  }
}

}  // namespace

CoverageCurve mae_at_coverage(std::span<const PredictionPair> preds, std::span<const double> y,
                              std::span<const double> levels, std::string tag,
                              std::uint64_t seed) {
  check_sizes(preds.size(), y.size());
  check_levels(levels);
  CoverageCurve curve;
  curve.tag = std::move(tag);
  curve.seed = seed;
  // One sort serves every level: the covered set at a level is a prefix.
  const auto full = threshold_coverage(preds, 1.0);
  const auto n = preds.size();
  for (double level : levels) {
    const auto k = std::min(
        n, static_cast<std::size_t>(std::ceil(level * static_cast<double>(n) - 1e-9)));
    curve.levels.push_back(level);
    curve.n_covered.push_back(k);
    if (k == 0) {
      curve.mae.push_back(std::nullopt);
    } else {
      curve.mae.push_back(mean_absolute_error(preds, y, std::span(full).first(k)));
    }
  }
  return curve;
}

CoverageCurve flat_mae_curve(std::span<const double> mu, std::span<const double> y,
                             std::span<const double> levels, std::string tag,
                             std::uint64_t seed) {
  check_sizes(mu.size(), y.size());
  check_levels(levels);
  if (mu.empty()) throw DomainError("no predictions");
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) total += std::abs(y[i] - mu[i]);
  const double mae = total / static_cast<double>(mu.size());
  CoverageCurve curve;
  curve.tag = std::move(tag);
  curve.seed = seed;
  for (double level : levels) {
    curve.levels.push_back(level);
    curve.mae.push_back(mae);
    curve.n_covered.push_back(mu.size());
  }
  return curve;
}

SelectivePoint tau_point(std::span<const PredictionPair> preds, std::span<const double> y,
                         double tau) {
  check_sizes(preds.size(), y.size());
  if (preds.empty()) throw DomainError("no predictions");
  const auto covered = tau_coverage(preds, tau);
  SelectivePoint point;
  point.n_covered = covered.size();
  point.coverage = static_cast<double>(covered.size()) / static_cast<double>(preds.size());
  if (!covered.empty()) point.mae = mean_absolute_error(preds, y, covered);
  return point;
}

CalibrationStats zscores(std::span<const PredictionPair> preds, std::span<const double> y,
                         Split split) {
  check_sizes(preds.size(), y.size());
  CalibrationStats stats;
  stats.split = split;
  stats.z.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!(preds[i].sigma > 0.0)) throw DomainError("sigma must be positive for z-scores");
    stats.z.push_back((y[i] - preds[i].mu) / preds[i].sigma);
  }
  const double width = (kHistogramMax - kHistogramMin) / kHistogramBins;
  for (int b = 0; b <= kHistogramBins; ++b) stats.edges.push_back(kHistogramMin + b * width);
  stats.counts.assign(kHistogramBins, 0);
  if (stats.z.empty()) return stats;

  double sum = 0.0;
  for (double z : stats.z) sum += z;
  stats.mean = sum / static_cast<double>(stats.z.size());
  double ss = 0.0;
  for (double z : stats.z) ss += (z - stats.mean) * (z - stats.mean);
  stats.std = std::sqrt(ss / static_cast<double>(stats.z.size()));

  for (double z : stats.z) {
    if (z < kHistogramMin) {
      ++stats.underflow;
    } else if (z >= kHistogramMax) {
      ++stats.overflow;
    } else {
      const auto b = std::min(kHistogramBins - 1,
                              static_cast<int>(std::floor((z - kHistogramMin) / width)));
      ++stats.counts[static_cast<std::size_t>(b)];
    }
  }
  return stats;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Envelope ensemble_envelope(std::span<const CoverageCurve> curves) {
  if (curves.empty()) throw AlignmentError("envelope of zero curves");
  Envelope env;
  env.levels = curves.front().levels;
  for (const auto& c : curves) {
    if (c.levels != env.levels || c.mae.size() != env.levels.size()) {
      throw AlignmentError("curves '" + curves.front().tag + "' and '" + c.tag +
                           "' have different coverage levels");
    }
  }
  for (std::size_t k = 0; k < env.levels.size(); ++k) {
    std::vector<double> values;
    for (const auto& c : curves) {
      if (c.mae[k]) values.push_back(*c.mae[k]);
    }
    if (values.empty()) {
      throw AlignmentError("no curve has a value at coverage " + std::to_string(env.levels[k]));
    }
    env.min.push_back(*std::min_element(values.begin(), values.end()));
    env.max.push_back(*std::max_element(values.begin(), values.end()));
    env.median.push_back(median_of(std::move(values)));
  }
  return env;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw DomainError("spearman needs two equal-length series of at least two values");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

void write_coverage_csv(const std::string& path, std::span<const CoverageCurve> curves,
                        const std::string& config_hash) {
  auto out = csv::open(path, config_hash);
  out << "coverage,mae,n_covered,tag,seed\n";
  for (const auto& c : curves) {
    for (std::size_t k = 0; k < c.levels.size(); ++k) {
      out << csv::num(c.levels[k]) << ',' << csv::num(c.mae[k]) << ',' << c.n_covered[k] << ','
          << c.tag << ',' << c.seed << '\n';
    }
  }
}

void write_envelope_csv(const std::string& path, const Envelope& env,
                        const std::string& config_hash) {
  auto out = csv::open(path, config_hash);
  out << "coverage,min,median,max\n";
  for (std::size_t k = 0; k < env.levels.size(); ++k) {
    out << csv::num(env.levels[k]) << ',' << csv::num(env.min[k]) << ','
        << csv::num(env.median[k]) << ',' << csv::num(env.max[k]) << '\n';
  }
}

void write_calibration_csv(const std::string& path, std::span<const CalibrationStats> stats,
                           const std::string& config_hash) {
  auto out = csv::open(path, config_hash);
  out << "bin_left,bin_right,count,split\n";
  for (const auto& s : stats) {
    const auto split = to_string(s.split);
    out << "-inf," << csv::num(kHistogramMin) << ',' << s.underflow << ',' << split << '\n';
    for (std::size_t b = 0; b < s.counts.size(); ++b) {
      out << csv::num(s.edges[b]) << ',' << csv::num(s.edges[b + 1]) << ',' << s.counts[b] << ','
          << split << '\n';
    }
    out << csv::num(kHistogramMax) << ",inf," << s.overflow << ',' << split << '\n';
  }
}

}  // namespace can
