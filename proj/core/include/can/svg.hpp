#pragma once

// Minimal SVG charts with ticked axes and a legend. Enough for the coverage
// and z-score figures.

#include <string>
#include <utility>
#include <vector>

namespace can::svg {

struct Series {
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#5e3c99";
  std::string label;
};

struct Band {
  std::vector<double> x;
  std::vector<double> lower;
  std::vector<double> upper;
  std::string color = "#b2abd2";
  std::string label;
};

struct Bars {
  std::vector<double> left;
  std::vector<double> right;
  std::vector<double> height;
  std::string color = "#5e3c99";
  std::string label;
};

class Chart {
 public:
  Chart(std::string title, std::string x_label, std::string y_label)
      : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

  void add_band(Band band) { bands_.push_back(std::move(band)); }
  void add_line(Series line) { lines_.push_back(std::move(line)); }
  void add_dots(Series dots) { dots_.push_back(std::move(dots)); }
  void add_bars(Bars bars) { bars_.push_back(std::move(bars)); }
  void add_note(std::string note) { notes_.push_back(std::move(note)); }

  // Fixes the x range instead of fitting it to the data.
  void set_x_range(double lo, double hi) {
    x_lo_ = lo;
    x_hi_ = hi;
    fixed_x_ = true;
  }

  std::string render(int width = 640, int height = 420) const;
  void save(const std::string& path, int width = 640, int height = 420) const;

 private:
  std::string title_, x_label_, y_label_;
  std::vector<Band> bands_;
  std::vector<Series> lines_;
  std::vector<Series> dots_;
  std::vector<Bars> bars_;
  std::vector<std::string> notes_;
  bool fixed_x_ = false;
  double x_lo_ = 0.0, x_hi_ = 1.0;
};

// Distinct colors for up to ten categories, then repeating.
std::string palette(std::size_t index);

}  // namespace can::svg
