#pragma once

// Minimal SVG line chart: axes with ticks, polyline series (gaps at missing
// points), horizontal reference lines and a legend.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "plaquemech/text.hpp"

namespace plaquemech::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<std::optional<double>> y;
  std::string color = "#1f77b4";
};

struct HLine {
  std::string name;
  double y = 0.0;
  std::string color = "#7b3294";
  bool dashed = true;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<HLine> lines;
  std::optional<std::pair<double, double>> y_range;
  int width = 640;
  int height = 400;
};

namespace detail {

inline std::string escape(const std::string& s) {
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

/// Fixed-precision coordinate so output is stable and short.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", std::abs(v) < 5e-3 ? 0.0 : v);
  return buf;
}

inline std::vector<double> ticks(double lo, double hi, int target = 6) {
  const double span = hi - lo;
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) out.push_back(t);
  return out;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

}  // namespace detail

inline std::string render(const Chart& c) {
  using detail::num;
  const double left = 70;
  const double right = 170;
  const double top = 40;
  const double bottom = 55;
  const double pw = c.width - left - right;
  const double ph = c.height - top - bottom;

  double xmin = 0;
  double xmax = 1;
  bool have_x = false;
  double ymin = 0;
  double ymax = 1;
  bool have_y = false;
  for (const auto& s : c.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = have_x ? std::min(xmin, s.x[i]) : s.x[i];
      xmax = have_x ? std::max(xmax, s.x[i]) : s.x[i];
      have_x = true;
      if (s.y[i]) {
        ymin = have_y ? std::min(ymin, *s.y[i]) : *s.y[i];
        ymax = have_y ? std::max(ymax, *s.y[i]) : *s.y[i];
        have_y = true;
      }
    }
  }
  for (const auto& l : c.lines) {
    ymin = have_y ? std::min(ymin, l.y) : l.y;
    ymax = have_y ? std::max(ymax, l.y) : l.y;
    have_y = true;
  }
  if (c.y_range) std::tie(ymin, ymax) = *c.y_range;
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  auto X = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::string o;
  o += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(c.width) + "\" height=\"" +
       std::to_string(c.height) + "\" viewBox=\"0 0 " + std::to_string(c.width) + " " + std::to_string(c.height) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(left + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       detail::escape(c.title) + "</text>\n";

  for (double t : detail::ticks(xmin, xmax)) {
    o += "<line x1=\"" + num(X(t)) + "\" y1=\"" + num(top + ph) + "\" x2=\"" + num(X(t)) + "\" y2=\"" +
         num(top + ph + 5) + "\" stroke=\"black\"/>\n";
    o += "<text x=\"" + num(X(t)) + "\" y=\"" + num(top + ph + 18) + "\" text-anchor=\"middle\">" +
         detail::tick_label(t) + "</text>\n";
  }
  for (double t : detail::ticks(ymin, ymax)) {
    o += "<line x1=\"" + num(left - 5) + "\" y1=\"" + num(Y(t)) + "\" x2=\"" + num(left + pw) + "\" y2=\"" +
         num(Y(t)) + "\" stroke=\"#dddddd\"/>\n";
    o += "<text x=\"" + num(left - 8) + "\" y=\"" + num(Y(t) + 4) + "\" text-anchor=\"end\">" +
         detail::tick_label(t) + "</text>\n";
  }
  o += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  o += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(c.height - 12.0) + "\" text-anchor=\"middle\">" +
       detail::escape(c.x_label) + "</text>\n";
  o += "<text transform=\"translate(18," + num(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       detail::escape(c.y_label) + "</text>\n";

  for (const auto& l : c.lines) {
    o += "<line x1=\"" + num(left) + "\" y1=\"" + num(Y(l.y)) + "\" x2=\"" + num(left + pw) + "\" y2=\"" +
         num(Y(l.y)) + "\" stroke=\"" + l.color + "\"" + (l.dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
  }
  for (const auto& s : c.series) {
    std::string pts;
    auto flush = [&] {
      if (!pts.empty()) o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
      pts.clear();
    };
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!s.y[i]) {
        flush();
        continue;
      }
      if (!pts.empty()) pts += " ";
      pts += num(X(s.x[i])) + "," + num(Y(*s.y[i]));
      o += "<circle cx=\"" + num(X(s.x[i])) + "\" cy=\"" + num(Y(*s.y[i])) + "\" r=\"3\" fill=\"" + s.color + "\"/>\n";
    }
    flush();
  }

  double ly = top + 10;
  const double lx = left + pw + 15;
  auto legend = [&](const std::string& name, const std::string& color, bool dashed) {
    o += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(lx + 24) + "\" y2=\"" + num(ly) +
         "\" stroke=\"" + color + "\" stroke-width=\"2\"" + (dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
    o += "<text x=\"" + num(lx + 30) + "\" y=\"" + num(ly + 4) + "\">" + detail::escape(name) + "</text>\n";
    ly += 20;
  };
  for (const auto& s : c.series) legend(s.name, s.color, false);
  for (const auto& l : c.lines) legend(l.name, l.color, l.dashed);
  o += "</svg>\n";
  return o;
}

}  // namespace plaquemech::svg
