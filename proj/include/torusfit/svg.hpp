#pragma once

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace torusfit {

/// Minimal SVG scatter/line plot for the CLI output files. Coordinates are
/// written with fixed precision so reruns emit identical bytes.
class SvgPlot {
 public:
  SvgPlot(double xmin, double xmax, double ymin, double ymax, int width = 640,
          int height = 480)
      : xmin_(xmin), xmax_(xmax), ymin_(ymin), ymax_(ymax), w_(width), h_(height) {}

  void add_points(const std::vector<std::pair<double, double>>& pts, double radius,
                  const std::string& color) {
    for (auto& [x, y] : pts)
      body_ << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\""
            << fmt(radius) << "\" fill=\"" << color << "\"/>\n";
  }

  void add_polyline(const std::vector<std::pair<double, double>>& pts,
                    const std::string& color, double width = 1.0) {
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
          << fmt(width) << "\" points=\"";
    for (auto& [x, y] : pts) body_ << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
    body_ << "\"/>\n";
  }

  void add_rect(double x0, double y0, double x1, double y1, const std::string& color) {
    double ax = px(x0), bx = px(x1);
    double ay = py(y1), by = py(y0);
    body_ << "<rect x=\"" << fmt(std::min(ax, bx)) << "\" y=\"" << fmt(std::min(ay, by))
          << "\" width=\"" << fmt(std::abs(bx - ax)) << "\" height=\""
          << fmt(std::abs(by - ay)) << "\" fill=\"" << color << "\"/>\n";
  }

  void add_label(double x, double y, const std::string& text) {
    body_ << "<text x=\"" << fmt(px(x)) << "\" y=\"" << fmt(py(y))
          << "\" font-size=\"12\" font-family=\"sans-serif\">" << text << "</text>\n";
  }

  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\""
        << h_ << "\" viewBox=\"0 0 " << w_ << ' ' << h_ << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << body_.str();
    out << "</svg>\n";
    return out.str();
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
  }
  double px(double x) const {
    return margin_ + (x - xmin_) / (xmax_ - xmin_) * (w_ - 2 * margin_);
  }
  double py(double y) const {
    return h_ - margin_ - (y - ymin_) / (ymax_ - ymin_) * (h_ - 2 * margin_);
  }

  double xmin_, xmax_, ymin_, ymax_;
  int w_, h_;
  static constexpr double margin_ = 32.0;
  std::ostringstream body_;
};

}  // namespace torusfit
