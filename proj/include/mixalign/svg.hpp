#pragma once

// Minimal deterministic SVG charts. Output depends only on the inputs:
// fixed palette, fixed-precision coordinates, no timestamps.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "mixalign/common.hpp"

namespace mixalign::svg {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct Bars {
  std::string name;
  std::vector<double> values;  // one per category
};

namespace detail {

inline constexpr int kWidth = 640;
inline constexpr int kHeight = 400;
inline constexpr int kLeft = 70;
inline constexpr int kRight = 160;
inline constexpr int kTop = 40;
inline constexpr int kBottom = 50;

inline const char* Color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % 10];
}

inline std::string Num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

inline std::string Tick(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

inline std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string Header(const std::string& title, const std::string& meta, int w = kWidth,
                          int h = kHeight) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
                  "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) +
                  " " + std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<desc>" + Escape(meta) + "</desc>\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + std::to_string(w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
       Escape(title) + "</text>\n";
  return s;
}

inline std::string Text(double x, double y, const std::string& t, const char* anchor = "start",
                        int rotate = 0) {
  std::string s = "<text x=\"" + Num(x) + "\" y=\"" + Num(y) + "\" text-anchor=\"" + anchor + "\"";
  if (rotate) s += " transform=\"rotate(" + std::to_string(rotate) + " " + Num(x) + " " + Num(y) + ")\"";
  return s + ">" + Escape(t) + "</text>\n";
}

inline std::string Line(double x1, double y1, double x2, double y2, const char* stroke = "#000") {
  return "<line x1=\"" + Num(x1) + "\" y1=\"" + Num(y1) + "\" x2=\"" + Num(x2) + "\" y2=\"" + Num(y2) +
         "\" stroke=\"" + stroke + "\"/>\n";
}

struct Axis {
  double lo = 0.0, hi = 1.0;
  void Cover(double x) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  void Finish() {
    if (!(hi > lo)) {
      const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
      lo -= pad;
      hi += pad;
    }
  }
  double Map(double x, double a, double b) const { return a + (x - lo) / (hi - lo) * (b - a); }
};

inline Axis Range(const std::vector<double>& xs) {
  Axis a{kInf, -kInf};
  for (double x : xs) a.Cover(x);
  if (xs.empty()) a = {0.0, 1.0};
  a.Finish();
  return a;
}

inline std::string Frame(const Axis& x, const Axis& y, const std::string& xlabel, const std::string& ylabel,
                         bool log_y) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string s = Line(x0, y0, x1, y0) + Line(x0, y0, x0, y1);
  for (int i = 0; i <= 4; ++i) {
    const double fx = x.lo + (x.hi - x.lo) * i / 4.0;
    const double px = x.Map(fx, x0, x1);
    s += Line(px, y0, px, y0 + 4) + Text(px, y0 + 16, Tick(fx), "middle");
    const double fy = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = y.Map(fy, y0, y1);
    s += Line(x0 - 4, py, x0, py) + Text(x0 - 6, py + 4, Tick(log_y ? std::pow(10.0, fy) : fy), "end");
  }
  s += Text((x0 + x1) / 2, kHeight - 12, xlabel, "middle");
  s += Text(16, (y0 + y1) / 2, ylabel, "middle", -90);
  return s;
}

inline std::string Legend(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 14.0 * static_cast<double>(i);
    const double x = kWidth - kRight + 12;
    s += "<rect x=\"" + Num(x) + "\" y=\"" + Num(y) + "\" width=\"10\" height=\"10\" fill=\"" + Color(i) +
         "\"/>\n";
    s += Text(x + 14, y + 9, names[i]);
  }
  return s;
}

}  // namespace detail

/// Line chart. With `log_y`, y values are plotted on a log10 scale and
/// nonpositive values are dropped.
inline std::string LineChart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                             const std::vector<Series>& series, const std::string& meta, bool log_y = false) {
  using namespace detail;
  std::vector<double> xs, ys;
  auto fy = [&](double y) { return log_y ? std::log10(y) : y; };
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(y) || (log_y && !(y > 0.0))) continue;
      xs.push_back(x);
      ys.push_back(fy(y));
    }
  const Axis ax = Range(xs), ay = Range(ys);
  std::string out = Header(title, meta) + Frame(ax, ay, xlabel, ylabel, log_y);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    names.push_back(series[i].name);
    std::string pts;
    for (const auto& [x, y] : series[i].points) {
      if (!std::isfinite(y) || (log_y && !(y > 0.0))) continue;
      if (!pts.empty()) pts += " ";
      pts += Num(ax.Map(x, kLeft, kWidth - kRight)) + "," + Num(ay.Map(fy(y), kHeight - kBottom, kTop));
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(Color(i)) + "\" stroke-width=\"1.5\" points=\"" +
           pts + "\"/>\n";
  }
  return out + Legend(names) + "</svg>\n";
}

/// Grouped bar chart: one group per category, one bar per series.
inline std::string BarChart(const std::string& title, const std::vector<std::string>& categories,
                            const std::vector<Bars>& bars, const std::string& ylabel, const std::string& meta) {
  using namespace detail;
  std::vector<double> ys{0.0};
  for (const auto& b : bars) {
    Require(b.values.size() == categories.size(), "BarChart: one value per category required");
    ys.insert(ys.end(), b.values.begin(), b.values.end());
  }
  Axis ay = Range(ys);
  ay.lo = std::min(ay.lo, 0.0);
  const Axis ax{0.0, static_cast<double>(std::max<std::size_t>(categories.size(), 1))};
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  std::string out = Header(title, meta) + Line(x0, y0, x1, y0) + Line(x0, y0, x0, y1);
  for (int i = 0; i <= 4; ++i) {
    const double fy = ay.lo + (ay.hi - ay.lo) * i / 4.0;
    const double py = ay.Map(fy, y0, y1);
    out += Line(x0 - 4, py, x0, py) + Text(x0 - 6, py + 4, Tick(fy), "end");
  }
  out += Text(16, (y0 + y1) / 2, ylabel, "middle", -90);
  const double group = (x1 - x0) / ax.hi;
  const double bw = group * 0.8 / static_cast<double>(std::max<std::size_t>(bars.size(), 1));
  std::vector<std::string> names;
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const double gx = x0 + group * static_cast<double>(c) + group * 0.1;
    out += Text(gx + group * 0.4, y0 + 16, categories[c], "middle");
    for (std::size_t b = 0; b < bars.size(); ++b) {
      const double v = bars[b].values[c];
      const double top = ay.Map(std::max(v, 0.0), y0, y1);
      const double base = ay.Map(std::min(v, 0.0), y0, y1);
      out += "<rect x=\"" + Num(gx + bw * static_cast<double>(b)) + "\" y=\"" + Num(top) + "\" width=\"" +
             Num(bw) + "\" height=\"" + Num(base - top) + "\" fill=\"" + Color(b) + "\"/>\n";
    }
  }
  for (const auto& b : bars) names.push_back(b.name);
  return out + Legend(names) + "</svg>\n";
}

/// Heatmap of a row-major matrix, white (min) to dark blue (max), with
/// each cell's value printed when the matrix is small.
inline std::string Heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                           const std::vector<std::string>& col_labels,
                           const std::vector<std::vector<double>>& m, const std::string& meta) {
  using namespace detail;
  Require(m.size() == row_labels.size(), "Heatmap: row label count mismatch");
  double lo = kInf, hi = -kInf;
  for (const auto& row : m) {
    Require(row.size() == col_labels.size(), "Heatmap: column label count mismatch");
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (m.empty() || col_labels.empty()) lo = hi = 0.0;
  const double span = hi > lo ? hi - lo : 1.0;
  const double x0 = 90, y0 = 40;
  const double cell = std::min(40.0, 480.0 / static_cast<double>(std::max(m.size(), col_labels.size()) + 1));
  const int w = static_cast<int>(x0 + cell * static_cast<double>(col_labels.size()) + 120);
  const int h = static_cast<int>(y0 + cell * static_cast<double>(m.size()) + 80);
  std::string out = Header(title, meta, w, h);
  const bool print = m.size() <= 12 && col_labels.size() <= 12;
  for (std::size_t r = 0; r < m.size(); ++r) {
    out += Text(x0 - 4, y0 + cell * (static_cast<double>(r) + 0.5) + 4, row_labels[r], "end");
    for (std::size_t c = 0; c < col_labels.size(); ++c) {
      const double t = (m[r][c] - lo) / span;
      const int red = static_cast<int>(std::lround(255 - 224 * t));
      const int green = static_cast<int>(std::lround(255 - 136 * t));
      const int blue = static_cast<int>(std::lround(255 - 75 * t));
      char fill[16];
      std::snprintf(fill, sizeof(fill), "#%02x%02x%02x", red, green, blue);
      const double x = x0 + cell * static_cast<double>(c), y = y0 + cell * static_cast<double>(r);
      out += "<rect x=\"" + Num(x) + "\" y=\"" + Num(y) + "\" width=\"" + Num(cell) + "\" height=\"" +
             Num(cell) + "\" fill=\"" + fill + "\"/>\n";
      if (print)
        out += "<text x=\"" + Num(x + cell / 2) + "\" y=\"" + Num(y + cell / 2 + 3) +
               "\" text-anchor=\"middle\" font-size=\"8\" fill=\"" + (t > 0.6 ? "white" : "black") + "\">" +
               Tick(m[r][c]) + "</text>\n";
    }
  }
  const double by = y0 + cell * static_cast<double>(m.size());
  for (std::size_t c = 0; c < col_labels.size(); ++c)
    out += Text(x0 + cell * (static_cast<double>(c) + 0.5), by + 12, col_labels[c], "end", -45);
  out += Text(x0 + cell * static_cast<double>(col_labels.size()) + 10, y0 + 10, "max " + Tick(hi));
  out += Text(x0 + cell * static_cast<double>(col_labels.size()) + 10, y0 + 24, "min " + Tick(lo));
  return out + "</svg>\n";
}

/// Scatter plot; each series' points are joined in order, which suits
/// checkpoint trajectories.
inline std::string Scatter(const std::string& title, const std::vector<Series>& series, const std::string& meta) {
  using namespace detail;
  std::vector<double> xs, ys;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      xs.push_back(x);
      ys.push_back(y);
    }
  const Axis ax = Range(xs), ay = Range(ys);
  std::string out = Header(title, meta) + Frame(ax, ay, "PC1", "PC2", false);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    names.push_back(series[i].name);
    std::string pts;
    for (const auto& [x, y] : series[i].points) {
      const std::string px = Num(ax.Map(x, kLeft, kWidth - kRight));
      const std::string py = Num(ay.Map(y, kHeight - kBottom, kTop));
      out += "<circle cx=\"" + px + "\" cy=\"" + py + "\" r=\"3\" fill=\"" + Color(i) + "\"/>\n";
      if (!pts.empty()) pts += " ";
      pts += px + "," + py;
    }
    if (series[i].points.size() > 1)
      out += "<polyline fill=\"none\" stroke=\"" + std::string(Color(i)) + "\" stroke-opacity=\"0.5\" points=\"" +
             pts + "\"/>\n";
  }
  return out + Legend(names) + "</svg>\n";
}

}  // namespace mixalign::svg
