#include "can/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "can/error.hpp"
#include "can/rng.hpp"

namespace can {

double great_circle_km(double lon1_deg, double lat1_deg, double lon2_deg, double lat2_deg) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double phi1 = lat1_deg * kDeg;
  const double phi2 = lat2_deg * kDeg;
  const double dphi = phi2 - phi1;
  const double dlambda = (lon2_deg - lon1_deg) * kDeg;
  const double a = std::sin(dphi / 2) * std::sin(dphi / 2) +
                   std::cos(phi1) * std::cos(phi2) * std::sin(dlambda / 2) * std::sin(dlambda / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

CorrelationModel build_correlation(const GridSpec& grid, double length_scale_km,
                                   double nugget) {
  if (!(length_scale_km > 0.0)) throw ConfigError("length scale must be positive");
  if (!(nugget >= 0.0)) throw ConfigError("nugget must be non-negative");
  if (grid.n_lon < 1 || grid.n_lat < 1) throw ConfigError("grid must be non-empty");

  CorrelationModel model;
  model.grid = grid;
  model.length_scale_km = length_scale_km;
  model.nugget = nugget;
  const int n = grid.size();
  model.correlation.resize(n, n);
  const double denom = 2.0 * length_scale_km * length_scale_km;
  for (int g = 0; g < n; ++g) {
    model.correlation(g, g) = 1.0 + nugget;
    for (int h = 0; h < g; ++h) {
      const double d =
          great_circle_km(grid.pixel_lon(g), grid.pixel_lat(g), grid.pixel_lon(h), grid.pixel_lat(h));
      const double c = std::exp(-d * d / denom);
      model.correlation(g, h) = c;
      model.correlation(h, g) = c;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(model.correlation);
  const Eigen::MatrixXd lower = llt.matrixL();
  if (llt.info() != Eigen::Success || !lower.diagonal().allFinite() ||
      (lower.diagonal().array() <= 0.0).any()) {
    const double suggested = std::max(nugget * 10.0, 1e-6);
    throw NuggetError("correlation matrix is not positive definite with nugget " +
                          std::to_string(nugget) + "; try " + std::to_string(suggested),
                      suggested);
  }
  model.cholesky = lower;
  return model;
}

Matrix sample_sst_fields(const CorrelationModel& corr, int n, std::uint64_t seed) {
  if (n < 1) throw DomainError("need at least one sample");
  const int g = corr.grid.size();
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(n, g);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  Matrix x(n, g);
  x.noalias() = z * corr.cholesky.transpose();
  return x;
}

double PiecewiseLinearField::evaluate(int g, double value) const {
  const auto& b = breakpoints;
  const auto s = slopes.col(g);
  // Hinge expansion around the zero-containing middle segment.
  return s(2) * value + (s(3) - s(2)) * std::max(value - b[2], 0.0) +
         (s(4) - s(3)) * std::max(value - b[3], 0.0) -
         (s(1) - s(2)) * std::max(b[1] - value, 0.0) -
         (s(0) - s(1)) * std::max(b[0] - value, 0.0);
}

PiecewiseLinearField build_response(const GridSpec& grid, const CorrelationModel& corr,
                                    std::uint64_t seed, double response_scale) {
  if (!(response_scale > 0.0)) throw ConfigError("response scale must be positive");
  if (corr.grid.size() != grid.size() || corr.cholesky.rows() != grid.size()) {
    throw DimensionError("correlation model does not match the grid");
  }
  PiecewiseLinearField field;
  field.slopes = sample_sst_fields(corr, kSegments, seed);
  const auto y = global_response(
      field, sample_sst_fields(corr, kResponseCalibrationMaps, derive_seed(seed, 1)));
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  // The response is linear in the slopes, so one rescale
  // hits the target exactly on the calibration sample.
  field.slopes *= response_scale / std::sqrt(ss / static_cast<double>(y.size()));
  return field;
}

double global_response(const PiecewiseLinearField& field, std::span<const double> x_map) {
  if (static_cast<int>(x_map.size()) != field.pixels()) {
    throw DimensionError("map has " + std::to_string(x_map.size()) + " pixels, field has " +
                         std::to_string(field.pixels()));
  }
  double y = 0.0;
  for (int g = 0; g < field.pixels(); ++g) y += field.evaluate(g, x_map[g]);
  return y;
}

std::vector<double> global_response(const PiecewiseLinearField& field, const Matrix& maps) {
  std::vector<double> y(static_cast<std::size_t>(maps.rows()));
  for (Eigen::Index i = 0; i < maps.rows(); ++i) {
    y[i] = global_response(field, std::span<const double>(maps.row(i).data(), maps.cols()));
  }
  return y;
}

std::string to_string(SampleFlag flag) {
  switch (flag) {
    case SampleFlag::signal:
      return "signal";
    case SampleFlag::shuffled_noise:
      return "shuffled_noise";
    case SampleFlag::corrupted:
      return "corrupted";
    case SampleFlag::clean:
      return "clean";
    case SampleFlag::line:
      return "line";
    case SampleFlag::cloud:
      return "cloud";
  }
  return "unknown";
}

SampleFlag parse_sample_flag(const std::string& name) {
  for (auto f : {SampleFlag::signal, SampleFlag::shuffled_noise, SampleFlag::corrupted,
                 SampleFlag::clean, SampleFlag::line, SampleFlag::cloud}) {
    if (to_string(f) == name) return f;
  }
  throw IoError("unknown sample flag '" + name + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "unknown";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw IoError("unknown split '" + name + "'");
}

std::size_t Dataset::count(SampleFlag flag) const {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), flag));
}

double Dataset::fraction(SampleFlag flag) const {
  return size() == 0 ? 0.0 : static_cast<double>(count(flag)) / static_cast<double>(size());
}

Dataset make_climate_dataset(const CorrelationModel& corr, const PiecewiseLinearField& field,
                             int n, std::uint64_t seed, Split split) {
  Dataset data;
  data.x = sample_sst_fields(corr, n, seed);
  data.y = global_response(field, data.x);
  data.flags.assign(static_cast<std::size_t>(n), SampleFlag::clean);
  data.split = split;
  data.seed = seed;
  return data;
}

std::vector<int> box_pixels(const GridSpec& grid, const LonLatBox& box) {
  std::vector<int> pixels;
  for (int g = 0; g < grid.size(); ++g) {
    const double lon = grid.pixel_lon(g);
    const double lat = grid.pixel_lat(g);
    if (lon >= box.lon_min && lon <= box.lon_max && lat >= box.lat_min && lat <= box.lat_max) {
      pixels.push_back(g);
    }
  }
  return pixels;
}

Dataset enso_transform(const Dataset& data, const GridSpec& grid, const LonLatBox& box,
                       double threshold, std::uint64_t seed) {
  if (data.features() != grid.size()) {
    throw DimensionError("dataset has " + std::to_string(data.features()) +
                         " features, grid has " + std::to_string(grid.size()) + " pixels");
  }
  const auto pixels = box_pixels(grid, box);
  if (pixels.empty()) throw DomainError("ENSO box contains no grid points");

  Dataset out = data;
  std::vector<std::size_t> noise;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double mean = 0.0;
    for (int g : pixels) mean += data.x(static_cast<Eigen::Index>(i), g);
    mean /= static_cast<double>(pixels.size());
    if (mean > threshold) {
      out.flags[i] = SampleFlag::signal;
    } else {
      out.flags[i] = SampleFlag::shuffled_noise;
      noise.push_back(i);
    }
  }
  std::vector<double> labels;
  labels.reserve(noise.size());
  for (auto i : noise) labels.push_back(data.y[i]);
  Rng rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t k = 0; k < noise.size(); ++k) out.y[noise[k]] = labels[k];
  return out;
}

namespace {

// floor(fraction * n) with a small tolerance so that e.g. 0.66 * 900 is 594.
std::size_t fraction_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

}  // namespace

Dataset corrupt_transform(const Dataset& data, double sample_fraction, double pixel_fraction,
                          double fill, std::uint64_t seed) {
  if (!(sample_fraction >= 0.0 && sample_fraction <= 1.0) ||
      !(pixel_fraction >= 0.0 && pixel_fraction <= 1.0)) {
    throw DomainError("corruption fractions must lie in [0, 1]");
  }
  Dataset out = data;
  std::fill(out.flags.begin(), out.flags.end(), SampleFlag::clean);
  const std::size_t n_samples = fraction_count(sample_fraction, data.size());
  const std::size_t n_pixels =
      fraction_count(pixel_fraction, static_cast<std::size_t>(data.features()));

  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> pixels(static_cast<std::size_t>(data.features()));
  for (std::size_t k = 0; k < n_samples; ++k) {
    const auto i = static_cast<Eigen::Index>(order[k]);
    out.flags[order[k]] = SampleFlag::corrupted;
    std::iota(pixels.begin(), pixels.end(), 0);
    std::shuffle(pixels.begin(), pixels.end(), rng);
    for (std::size_t p = 0; p < n_pixels; ++p) out.x(i, pixels[p]) = fill;
  }
  return out;
}

Dataset make_1d_dataset(int n, std::uint64_t seed, Split split) {
  if (n < 1) throw DomainError("need at least one sample");
  const int n_line = static_cast<int>(std::lround(0.3 * n));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> xs(static_cast<std::size_t>(n));
  std::vector<double> ys(xs.size());
  std::vector<SampleFlag> flags(xs.size());
  for (int i = 0; i < n; ++i) {
    if (i < n_line) {
      const double x = 0.5 * normal(rng);
      xs[i] = x;
      ys[i] = 0.7 * x + 0.6 + 0.05 * normal(rng);
      flags[i] = SampleFlag::line;
    } else {
      const double x = 4.0 + 0.25 * normal(rng);
      xs[i] = x;
      ys[i] = 1.0 * x - 2.0 + 0.5 * normal(rng);
      flags[i] = SampleFlag::cloud;
    }
  }
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  Dataset data;
  data.x.resize(n, 1);
  data.y.resize(xs.size());
  data.flags.resize(xs.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    data.x(static_cast<Eigen::Index>(k), 0) = xs[order[k]];
    data.y[k] = ys[order[k]];
    data.flags[k] = flags[order[k]];
  }
  data.split = split;
  data.seed = seed;
  return data;
}

namespace {

constexpr char kDatasetMagic[8] = {'C', 'A', 'N', 'D', 'S', 'E', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; add byte swapping for this host");

template <typename T>
void write_raw(std::ofstream& out, const T* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void read_raw(std::ifstream& in, T* data, std::size_t count, const std::string& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw IoError("truncated dataset file " + path);
}

nlohmann::json flag_counts(const Dataset& data) {
  nlohmann::json counts = nlohmann::json::object();
  for (auto f : {SampleFlag::signal, SampleFlag::shuffled_noise, SampleFlag::corrupted,
                 SampleFlag::clean, SampleFlag::line, SampleFlag::cloud}) {
    const auto c = data.count(f);
    if (c > 0) counts[to_string(f)] = c;
  }
  return counts;
}

}  // namespace

void write_dataset(const Dataset& data, const std::string& path) {
  if (data.x.rows() != static_cast<Eigen::Index>(data.size()) || data.flags.size() != data.size()) {
    throw DimensionError("dataset columns have inconsistent lengths");
  }
  const nlohmann::json header = {{"samples", data.size()},
                                 {"features", data.features()},
                                 {"split", to_string(data.split)},
                                 {"seed", data.seed},
                                 {"config_hash", data.config_hash},
                                 {"flag_counts", flag_counts(data)},
                                 {"metadata", data.metadata}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path);
  out.write(kDatasetMagic, sizeof(kDatasetMagic));
  const std::uint64_t len = text.size();
  write_raw(out, &len, 1);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_raw(out, data.y.data(), data.y.size());
  std::vector<std::uint8_t> flags(data.flags.size());
  std::transform(data.flags.begin(), data.flags.end(), flags.begin(),
                 [](SampleFlag f) { return static_cast<std::uint8_t>(f); });
  write_raw(out, flags.data(), flags.size());
  write_raw(out, data.x.data(), static_cast<std::size_t>(data.x.size()));
  if (!out) throw IoError("failed writing dataset " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing dataset file " + path);
  char magic[sizeof(kDatasetMagic)];
  read_raw(in, magic, sizeof(magic), path);
  if (std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
    throw IoError(path + " is not a dataset file");
  }
  std::uint64_t len = 0;
  read_raw(in, &len, 1, path);
  std::string text(len, '\0');
  read_raw(in, text.data(), len, path);

  Dataset data;
  try {
    const auto header = nlohmann::json::parse(text);
    const auto n = header.at("samples").get<std::size_t>();
    const auto f = header.at("features").get<int>();
    data.split = parse_split(header.at("split").get<std::string>());
    data.seed = header.at("seed").get<std::uint64_t>();
    data.config_hash = header.at("config_hash").get<std::string>();
    data.metadata = header.value("metadata", nlohmann::json::object());
    data.y.resize(n);
    data.flags.resize(n);
    data.x.resize(static_cast<Eigen::Index>(n), f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad dataset header in " + path + ": " + e.what());
  }
  read_raw(in, data.y.data(), data.y.size(), path);
  std::vector<std::uint8_t> flags(data.size());
  read_raw(in, flags.data(), flags.size(), path);
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] > static_cast<std::uint8_t>(SampleFlag::cloud)) {
      throw IoError("bad sample flag in " + path);
    }
    data.flags[i] = static_cast<SampleFlag>(flags[i]);
  }
  read_raw(in, data.x.data(), static_cast<std::size_t>(data.x.size()), path);
  return data;
}

nlohmann::json describe(const Dataset& data) {
  nlohmann::json out = {{"samples", data.size()},
                        {"features", data.features()},
                        {"split", to_string(data.split)},
                        {"seed", data.seed},
                        {"config_hash", data.config_hash}};
  nlohmann::json fractions = nlohmann::json::object();
  const auto counts = flag_counts(data);
  for (const auto& [name, c] : counts.items()) {
    fractions[name] = c.get<double>() / static_cast<double>(data.size());
  }
  out["flag_fractions"] = fractions;
  if (data.size() > 0) {
    const Eigen::Map<const Eigen::VectorXd> y(data.y.data(), static_cast<Eigen::Index>(data.size()));
    const double mean = y.mean();
    out["y"] = {{"mean", mean},
                {"std", std::sqrt((y.array() - mean).square().mean())},
                {"min", y.minCoeff()},
                {"max", y.maxCoeff()}};
    const double xm = data.x.mean();
    out["x"] = {{"mean", xm},
                {"std", std::sqrt((data.x.array() - xm).square().mean())},
                {"min", data.x.minCoeff()},
                {"max", data.x.maxCoeff()}};
  }
  if (!data.metadata.empty()) out["metadata"] = data.metadata;
  return out;
}

}  // namespace can
