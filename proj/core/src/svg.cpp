#include "can/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "can/error.hpp"

namespace can::svg {

namespace {

std::string fmt(double v, int precision = 2) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

// Round tick step: 1, 2 or 5 times a power of ten.
double nice_step(double span, int target) {
  const double raw = span / std::max(target, 1);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  const double f = norm < 1.5 ? 1.0 : norm < 3.5 ? 2.0 : norm < 7.5 ? 5.0 : 10.0;
  return f * mag;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

}  // namespace

std::string palette(std::size_t index) {
  static const char* colors[] = {"#e66101", "#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                                 "#66a61e", "#e6ab02", "#a6761d", "#1f78b4", "#666666"};
  return colors[index % 10];
}

std::string Chart::render(int width, int height) const {
  const double left = 70, right = 20, top = 40, bottom = 55;
  const double pw = width - left - right;
  const double ph = height - top - bottom;

  Range xr, yr;
  for (const auto& b : bands_) {
    for (double v : b.x) xr.add(v);
    for (double v : b.lower) yr.add(v);
    for (double v : b.upper) yr.add(v);
  }
  for (const auto* group : {&lines_, &dots_}) {
    for (const auto& s : *group) {
      for (double v : s.x) xr.add(v);
      for (double v : s.y) yr.add(v);
    }
  }
  for (const auto& b : bars_) {
    for (double v : b.left) xr.add(v);
    for (double v : b.right) xr.add(v);
    for (double v : b.height) yr.add(v);
    yr.add(0.0);
  }
  xr.finish();
  yr.finish();
  if (fixed_x_) {
    xr.lo = x_lo_;
    xr.hi = x_hi_;
  }
  const double ypad = 0.05 * (yr.hi - yr.lo);
  yr.lo -= ypad;
  yr.hi += ypad;

  auto px = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * ph; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (const auto& note : notes_) out << "<!-- " << escape(note) << " -->\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << fmt(width / 2.0) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title_) << "</text>\n";

  // Axes and ticks.
  out << "<g stroke=\"#333\" fill=\"none\"><rect x=\"" << fmt(left) << "\" y=\"" << fmt(top)
      << "\" width=\"" << fmt(pw) << "\" height=\"" << fmt(ph) << "\"/></g>\n";
  const double xs = nice_step(xr.hi - xr.lo, 8);
  for (double t = std::ceil(xr.lo / xs) * xs; t <= xr.hi + 1e-9; t += xs) {
    out << "<line x1=\"" << fmt(px(t)) << "\" y1=\"" << fmt(top + ph) << "\" x2=\"" << fmt(px(t))
        << "\" y2=\"" << fmt(top + ph + 5) << "\" stroke=\"#333\"/>";
    out << "<text x=\"" << fmt(px(t)) << "\" y=\"" << fmt(top + ph + 18)
        << "\" text-anchor=\"middle\">" << fmt(t, xs < 1 ? 2 : 0) << "</text>\n";
  }
  const double ys = nice_step(yr.hi - yr.lo, 6);
  for (double t = std::ceil(yr.lo / ys) * ys; t <= yr.hi + 1e-9; t += ys) {
    out << "<line x1=\"" << fmt(left - 5) << "\" y1=\"" << fmt(py(t)) << "\" x2=\"" << fmt(left)
        << "\" y2=\"" << fmt(py(t)) << "\" stroke=\"#333\"/>";
    out << "<text x=\"" << fmt(left - 8) << "\" y=\"" << fmt(py(t) + 4)
        << "\" text-anchor=\"end\">" << fmt(t, ys < 0.1 ? 3 : ys < 1 ? 2 : 0) << "</text>\n";
  }
  out << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"" << fmt(height - 12.0)
      << "\" text-anchor=\"middle\">" << escape(x_label_) << "</text>\n";
  out << "<text transform=\"translate(18," << fmt(top + ph / 2) << ") rotate(-90)\" "
      << "text-anchor=\"middle\">" << escape(y_label_) << "</text>\n";

  for (const auto& b : bars_) {
    for (std::size_t i = 0; i < b.height.size(); ++i) {
      out << "<rect x=\"" << fmt(px(b.left[i])) << "\" y=\"" << fmt(py(b.height[i]))
          << "\" width=\"" << fmt(std::max(0.0, px(b.right[i]) - px(b.left[i])))
          << "\" height=\"" << fmt(std::max(0.0, py(0.0) - py(b.height[i]))) << "\" fill=\""
          << b.color << "\" fill-opacity=\"0.7\"/>\n";
    }
  }
  for (const auto& b : bands_) {
    out << "<polygon fill=\"" << b.color << "\" fill-opacity=\"0.5\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < b.x.size(); ++i) out << fmt(px(b.x[i])) << ',' << fmt(py(b.upper[i])) << ' ';
    for (std::size_t i = b.x.size(); i-- > 0;) out << fmt(px(b.x[i])) << ',' << fmt(py(b.lower[i])) << ' ';
    out << "\"/>\n";
  }
  for (const auto& s : lines_) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i])) out << fmt(px(s.x[i])) << ',' << fmt(py(s.y[i])) << ' ';
    }
    out << "\"/>\n";
  }
  for (const auto& s : dots_) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      out << "<circle cx=\"" << fmt(px(s.x[i])) << "\" cy=\"" << fmt(py(s.y[i]))
          << "\" r=\"4\" fill=\"" << s.color << "\" stroke=\"#222\" stroke-width=\"0.5\"/>\n";
    }
  }

  // Legend.
  double ly = top + 14;
  auto legend = [&](const std::string& color, const std::string& label) {
    if (label.empty()) return;
    out << "<rect x=\"" << fmt(left + pw - 150) << "\" y=\"" << fmt(ly - 9)
        << "\" width=\"12\" height=\"10\" fill=\"" << color << "\"/>";
    out << "<text x=\"" << fmt(left + pw - 133) << "\" y=\"" << fmt(ly) << "\">" << escape(label)
        << "</text>\n";
    ly += 16;
  };
  for (const auto& b : bands_) legend(b.color, b.label);
  for (const auto& s : lines_) legend(s.color, s.label);
  for (const auto& s : dots_) legend(s.color, s.label);
  for (const auto& b : bars_) legend(b.color, b.label);

  out << "</svg>\n";
  return out.str();
}

void Chart::save(const std::string& path, int width, int height) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << render(width, height);
}

}  // namespace can::svg
