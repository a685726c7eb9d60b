#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "safectl/csv.hpp"
#include "safectl/error.hpp"

namespace safectl {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
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

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

/// Self-contained line chart. The raw points are repeated in a comment block, and the output
/// depends only on the data, so identical inputs give identical files.
inline void write_svg(std::ostream& out, const Chart& chart) {
  constexpr double width = 720, height = 420, left = 70, right = 20, top = 40, bottom = 50;
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo, y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : chart.series) {
    detail::require(s.x.size() == s.y.size(), "svg: series '" + s.name + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (!(x_lo <= x_hi)) x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  if (x_hi == x_lo) x_lo -= 0.5, x_hi += 0.5;
  if (y_hi == y_lo) y_lo -= 0.5, y_hi += 0.5;
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  const double plot_w = width - left - right, plot_h = height - top - bottom;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  auto py = [&](double y) { return top + (y_hi - y) / (y_hi - y_lo) * plot_h; };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<!-- data\n";
  for (const auto& s : chart.series) {
    out << "series " << detail::xml_escape(s.name) << '\n';
    for (std::size_t i = 0; i < s.x.size(); ++i) out << csv::format(s.x[i]) << ' ' << csv::format(s.y[i]) << '\n';
  }
  out << "-->\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
      << detail::xml_escape(chart.title) << "</text>\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x_lo + (x_hi - x_lo) * i / 5.0, yv = y_lo + (y_hi - y_lo) * i / 5.0;
    out << "<line x1=\"" << detail::fixed(px(xv)) << "\" y1=\"" << top + plot_h << "\" x2=\"" << detail::fixed(px(xv))
        << "\" y2=\"" << top + plot_h + 5 << "\" stroke=\"black\"/>";
    out << "<text x=\"" << detail::fixed(px(xv)) << "\" y=\"" << top + plot_h + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << detail::tick_label(xv)
        << "</text>\n";
    out << "<line x1=\"" << left - 5 << "\" y1=\"" << detail::fixed(py(yv)) << "\" x2=\"" << left << "\" y2=\""
        << detail::fixed(py(yv)) << "\" stroke=\"black\"/>";
    out << "<text x=\"" << left - 8 << "\" y=\"" << detail::fixed(py(yv) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << detail::tick_label(yv)
        << "</text>\n";
  }
  out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << detail::xml_escape(chart.x_label)
      << "</text>\n";
  out << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
      << "font-size=\"13\" transform=\"rotate(-90 16 " << top + plot_h / 2 << ")\">"
      << detail::xml_escape(chart.y_label) << "</text>\n";

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    const char* colour = palette[k % (sizeof palette / sizeof *palette)];
    // At most ~2000 vertices per polyline; the comment block keeps every point.
    const std::size_t stride = std::max<std::size_t>(1, s.x.size() / 2000);
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); i += stride) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      out << detail::fixed(px(s.x[i])) << ',' << detail::fixed(py(s.y[i])) << ' ';
    }
    out << "\"/>\n";
    const double ly = top + 16 + 16 * static_cast<double>(k);
    out << "<line x1=\"" << left + plot_w - 150 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + plot_w - 130
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>";
    out << "<text x=\"" << left + plot_w - 125 << "\" y=\"" << ly
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << detail::xml_escape(s.name) << "</text>\n";
  }
  out << "</svg>\n";
}

/// Long-format sibling CSV: series,x,y.
inline void write_chart_csv(std::ostream& out, const Chart& chart) {
  out << "series,x,y\n";
  for (const auto& s : chart.series)
    for (std::size_t i = 0; i < s.x.size(); ++i)
      out << s.name << ',' << csv::format(s.x[i]) << ',' << csv::format(s.y[i]) << '\n';
}

/// Writes <stem>.svg and <stem>.csv.
inline void save_chart(const std::string& stem, const Chart& chart) {
  std::ofstream svg(stem + ".svg");
  std::ofstream data(stem + ".csv");
  if (!svg || !data) throw DomainError("cannot write chart '" + stem + "'");
  write_svg(svg, chart);
  write_chart_csv(data, chart);
}

}  // namespace safectl
