#include "mocnn/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace mocnn::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string tick_label(double v) {
  if (v == 0) return "0";
  const double a = std::abs(v);
  return (a >= 1e4 || a < 1e-2) ? fmt("%.2g", v) : fmt("%.3g", v);
}

struct Frame {
  double w, h, x0, x1, y0, y1;
  bool log_y;
  double px(double x) const { return kLeft + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (w - kLeft - kRight); }
  double py(double y) const {
    const double t = log_y ? (std::log10(y) - std::log10(y0)) / (std::log10(y1) - std::log10(y0))
                           : (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5);
    return h - kBottom - t * (h - kTop - kBottom);
  }
};

std::string header(const ChartOptions& o) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(o.width) + "\" height=\"" +
                  std::to_string(o.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt("%.1f", o.width / 2.0) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
       escape(o.title) + "</text>\n";
  s += "<text x=\"" + fmt("%.1f", o.width / 2.0) + "\" y=\"" + fmt("%.1f", o.height - 10.0) +
       "\" text-anchor=\"middle\">" + escape(o.x_label) + "</text>\n";
  s += "<text transform=\"translate(16," + fmt("%.1f", o.height / 2.0) +
       ") rotate(-90)\" text-anchor=\"middle\">" + escape(o.y_label) + "</text>\n";
  return s;
}

std::string axes(const Frame& f, bool x_ticks) {
  std::string s;
  s += "<line x1=\"" + fmt("%.1f", kLeft) + "\" y1=\"" + fmt("%.1f", f.h - kBottom) + "\" x2=\"" +
       fmt("%.1f", f.w - kRight) + "\" y2=\"" + fmt("%.1f", f.h - kBottom) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt("%.1f", kLeft) + "\" y1=\"" + fmt("%.1f", kTop) + "\" x2=\"" + fmt("%.1f", kLeft) +
       "\" y2=\"" + fmt("%.1f", f.h - kBottom) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double t = i / 4.0;
    const double yv = f.log_y ? std::pow(10.0, std::log10(f.y0) + t * (std::log10(f.y1) - std::log10(f.y0)))
                              : f.y0 + t * (f.y1 - f.y0);
    const double y = f.py(yv);
    s += "<line x1=\"" + fmt("%.1f", kLeft - 4) + "\" y1=\"" + fmt("%.1f", y) + "\" x2=\"" +
         fmt("%.1f", f.w - kRight) + "\" y2=\"" + fmt("%.1f", y) + "\" stroke=\"#ddd\"/>\n";
    s += "<text x=\"" + fmt("%.1f", kLeft - 6) + "\" y=\"" + fmt("%.1f", y + 4) + "\" text-anchor=\"end\">" +
         tick_label(yv) + "</text>\n";
    if (x_ticks) {
      const double xv = f.x0 + t * (f.x1 - f.x0);
      s += "<text x=\"" + fmt("%.1f", f.px(xv)) + "\" y=\"" + fmt("%.1f", f.h - kBottom + 16) +
           "\" text-anchor=\"middle\">" + tick_label(xv) + "</text>\n";
    }
  }
  return s;
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const ChartOptions& o) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (o.log_y && s.y[i] <= 0)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = o.log_y ? 1 : 0, y1 = o.log_y ? 10 : 1;
  if (!o.log_y) {
    const double pad = (y1 - y0) * 0.05 + (y1 == y0 ? 1 : 0);
    y0 = (y0 >= 0 && y0 - pad < 0) ? 0.0 : y0 - pad;
    y1 += pad;
  } else if (y1 == y0) {
    y0 /= 2;
    y1 *= 2;
  }
  const Frame f{double(o.width), double(o.height), x0, x1, y0, y1, o.log_y};
  std::string s = header(o) + axes(f, true);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& sr = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < std::min(sr.x.size(), sr.y.size()); ++i) {
      if (!std::isfinite(sr.y[i]) || (o.log_y && sr.y[i] <= 0)) continue;
      points += fmt("%.2f", f.px(sr.x[i])) + "," + fmt("%.2f", f.py(sr.y[i])) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + points +
         "\"/>\n";
    if (sr.x.size() <= 30) {
      for (std::size_t i = 0; i < std::min(sr.x.size(), sr.y.size()); ++i) {
        if (!std::isfinite(sr.y[i]) || (o.log_y && sr.y[i] <= 0)) continue;
        s += "<circle cx=\"" + fmt("%.2f", f.px(sr.x[i])) + "\" cy=\"" + fmt("%.2f", f.py(sr.y[i])) +
             "\" r=\"3\" fill=\"" + color + "\"/>\n";
      }
    }
    const double ly = kTop + 6 + 16.0 * double(k);
    s += "<rect x=\"" + fmt("%.1f", o.width - kRight - 150) + "\" y=\"" + fmt("%.1f", ly) +
         "\" width=\"12\" height=\"4\" fill=\"" + color + "\"/>\n";
    s += "<text x=\"" + fmt("%.1f", o.width - kRight - 132) + "\" y=\"" + fmt("%.1f", ly + 6) + "\">" +
         escape(sr.name) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      const ChartOptions& o) {
  double y1 = 0;
  for (double v : values) {
    if (std::isfinite(v)) y1 = std::max(y1, v);
  }
  if (y1 <= 0) y1 = 1;
  y1 *= 1.1;
  const Frame f{double(o.width), double(o.height), 0, 1, 0, y1, false};
  std::string s = header(o) + axes(f, false);
  const std::size_t n = values.size();
  const double slot = (f.w - kLeft - kRight) / double(std::max<std::size_t>(n, 1));
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::isfinite(values[i]) ? std::max(0.0, values[i]) : 0.0;
    const double x = kLeft + slot * double(i) + slot * 0.15;
    const double top = f.py(v);
    s += "<rect x=\"" + fmt("%.2f", x) + "\" y=\"" + fmt("%.2f", top) + "\" width=\"" + fmt("%.2f", slot * 0.7) +
         "\" height=\"" + fmt("%.2f", f.h - kBottom - top) + "\" fill=\"" + kPalette[0] + "\"/>\n";
    s += "<text x=\"" + fmt("%.2f", x + slot * 0.35) + "\" y=\"" + fmt("%.1f", f.h - kBottom + 16) +
         "\" text-anchor=\"middle\">" + escape(i < labels.size() ? labels[i] : std::to_string(i)) + "</text>\n";
    s += "<text x=\"" + fmt("%.2f", x + slot * 0.35) + "\" y=\"" + fmt("%.2f", top - 4) +
         "\" text-anchor=\"middle\" font-size=\"10\">" + tick_label(v) + "</text>\n";
  }
  return s + "</svg>\n";
}

}  // namespace mocnn::svg
