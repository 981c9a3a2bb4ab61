#pragma once

// Seeded generators for the synthetic benchmark datasets:
//   * spatially correlated sea-surface-temperature anomaly maps on a coarse
//     global grid, with a global response that is the sum of local
//     piecewise-linear functions of each pixel;
//   * the forecasts-of-opportunity variant, where only samples with a warm
//     equatorial-Pacific box keep their labels and the rest are shuffled;
//   * the corrupt-inputs variant, where a share of the maps has most pixels
//     overwritten by a fill value;
//   * a one-dimensional line-plus-cloud toy problem.
//
// Every output is a pure function of its arguments and seed.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "can/net.hpp"

namespace can {

inline constexpr double kEarthRadiusKm = 6371.0;

struct GridSpec {
  int n_lon = 60;
  int n_lat = 15;

  int size() const { return n_lon * n_lat; }
  // Cell-centre coordinates in degrees. Pixel g = lat_index * n_lon + lon_index.
  double lon(int lon_index) const { return 360.0 * (lon_index + 0.5) / n_lon; }
  double lat(int lat_index) const { return -90.0 + 180.0 * (lat_index + 0.5) / n_lat; }
  double pixel_lon(int g) const { return lon(g % n_lon); }
  double pixel_lat(int g) const { return lat(g / n_lon); }
};

double great_circle_km(double lon1_deg, double lat1_deg, double lon2_deg, double lat2_deg);

enum class Kernel { gaussian_greatcircle };

struct CorrelationModel {
  GridSpec grid;
  Kernel kernel = Kernel::gaussian_greatcircle;
  double length_scale_km = 2500.0;
  double nugget = 1e-6;
  Eigen::MatrixXd correlation;  // kernel plus nugget on the diagonal
  Eigen::MatrixXd cholesky;     // lower factor L with L L^T = correlation
};

// C[g,h] = exp(-d(g,h)^2 / (2 l^2)) + nugget * I. Throws NuggetError when the
// factorization fails.
CorrelationModel build_correlation(const GridSpec& grid, double length_scale_km,
                                   double nugget);

// n independent rows z L^T with z ~ N(0, I).
Matrix sample_sst_fields(const CorrelationModel& corr, int n, std::uint64_t seed);

inline constexpr int kSegments = 5;
inline constexpr std::array<double, kSegments - 1> kDefaultBreakpoints = {-1.2, -0.4, 0.4, 1.2};

// Per-pixel continuous piecewise-linear response with F_g(0) = 0. The middle
// segment contains zero, so F_g(x) = slope[2] * x there.
struct PiecewiseLinearField {
  std::array<double, kSegments - 1> breakpoints = kDefaultBreakpoints;
  Eigen::MatrixXd slopes;  // kSegments x pixels

  int pixels() const { return static_cast<int>(slopes.cols()); }
  double evaluate(int g, double value) const;
};

// Standard deviation of y over maps drawn from the kernel.
inline constexpr double kDefaultResponseScale = 0.5;
inline constexpr int kResponseCalibrationMaps = 2000;

// Each segment's slope field is one correlated draw from the map kernel.
// The slopes are then rescaled so that y has standard deviation
// response_scale over a fixed seeded sample of kResponseCalibrationMaps
// maps; without this the label scale varies by about 20% between seeds.
PiecewiseLinearField build_response(const GridSpec& grid, const CorrelationModel& corr,
                                    std::uint64_t seed,
                                    double response_scale = kDefaultResponseScale);

// y = sum_g F_g(x_g).
double global_response(const PiecewiseLinearField& field, std::span<const double> x_map);
std::vector<double> global_response(const PiecewiseLinearField& field, const Matrix& maps);

enum class SampleFlag : std::uint8_t { signal, shuffled_noise, corrupted, clean, line, cloud };
enum class Split : std::uint8_t { train, val, test };

std::string to_string(SampleFlag flag);
SampleFlag parse_sample_flag(const std::string& name);
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct Dataset {
  Matrix x;
  std::vector<double> y;
  std::vector<SampleFlag> flags;
  Split split = Split::train;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const { return y.size(); }
  int features() const { return static_cast<int>(x.cols()); }
  std::size_t count(SampleFlag flag) const;
  double fraction(SampleFlag flag) const;
};

// Correlated maps, piecewise-linear labels, every sample flagged `clean`.
Dataset make_climate_dataset(const CorrelationModel& corr, const PiecewiseLinearField& field,
                             int n, std::uint64_t seed, Split split);

struct LonLatBox {
  double lon_min = 204.0;
  double lon_max = 240.0;
  double lat_min = -6.0;
  double lat_max = 6.0;
};

std::vector<int> box_pixels(const GridSpec& grid, const LonLatBox& box);

// Samples whose box-mean anomaly exceeds `threshold` are flagged `signal`
// and untouched; the others are flagged `shuffled_noise` and their labels are
// permuted among themselves.
Dataset enso_transform(const Dataset& data, const GridSpec& grid, const LonLatBox& box,
                       double threshold, std::uint64_t seed);

// floor(sample_fraction * n) samples are flagged `corrupted` and get
// floor(pixel_fraction * features) of their pixels set to `fill`. Labels are
// untouched; the remaining samples are flagged `clean`.
Dataset corrupt_transform(const Dataset& data, double sample_fraction, double pixel_fraction,
                          double fill, std::uint64_t seed);

// round(0.3 n) `line` samples around y = 0.7 x + 0.6 and the rest `cloud`
// samples around y = x - 2, in seeded random order.
Dataset make_1d_dataset(int n, std::uint64_t seed, Split split = Split::train);

// Binary container: magic and a JSON header describing the split, followed
// by the raw arrays (little-endian doubles for y and row-major x, one byte
// per flag).
void write_dataset(const Dataset& data, const std::string& path);
Dataset read_dataset(const std::string& path);

// Summary statistics (sizes, flag fractions, moments of y and x).
nlohmann::json describe(const Dataset& data);

}  // namespace can
