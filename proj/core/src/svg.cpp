#include "fdn/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace fdn::svg {

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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

std::string colour(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % 10];
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v, bool log) {
  char buf[32];
  if (log) {
    std::snprintf(buf, sizeof buf, "1e%d", static_cast<int>(std::lround(v)));
  } else {
    std::snprintf(buf, sizeof buf, "%.3g", v);
  }
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool empty() const { return !(lo <= hi); }
  void pad() {
    if (empty()) {
      lo = 0.0;
      hi = 1.0;
    } else if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

double to_axis(double v, bool log) { return log ? std::log10(v) : v; }

bool usable(double v, bool log) { return std::isfinite(v) && (!log || v > 0.0); }

}  // namespace

std::string plot(const Axes& axes, const std::vector<Series>& series, bool identity_guide,
                 int width, int height) {
  const double left = 70, right = 170, top = 40, bottom = 55;
  const double pw = width - left - right, ph = height - top - bottom;
  Range rx, ry;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], axes.log_x) || !usable(s.y[i], axes.log_y)) continue;
      rx.add(to_axis(s.x[i], axes.log_x));
      ry.add(to_axis(s.y[i], axes.log_y));
    }
  }
  if (identity_guide && axes.log_x == axes.log_y && !rx.empty()) {
    const double lo = std::min(rx.lo, ry.lo), hi = std::max(rx.hi, ry.hi);
    rx = {lo, hi};
    ry = {lo, hi};
  }
  rx.pad();
  ry.pad();
  auto px = [&](double v) { return left + (v - rx.lo) / (rx.hi - rx.lo) * pw; };
  auto py = [&](double v) { return top + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << escape(axes.title) << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double vx = rx.lo + (rx.hi - rx.lo) * t / 4.0;
    const double vy = ry.lo + (ry.hi - ry.lo) * t / 4.0;
    o << "<text x=\"" << num(px(vx)) << "\" y=\"" << top + ph + 16
      << "\" text-anchor=\"middle\">" << tick_label(vx, axes.log_x) << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << num(py(vy) + 4) << "\" text-anchor=\"end\">"
      << tick_label(vy, axes.log_y) << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
    << escape(axes.x_label) << "</text>\n";
  o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(axes.y_label) << "</text>\n";
  if (identity_guide) {
    const double lo = std::max(rx.lo, ry.lo), hi = std::min(rx.hi, ry.hi);
    if (lo < hi) {
      o << "<line x1=\"" << num(px(lo)) << "\" y1=\"" << num(py(lo)) << "\" x2=\"" << num(px(hi))
        << "\" y2=\"" << num(py(hi)) << "\" stroke=\"#444\" stroke-dasharray=\"6,4\"/>\n";
    }
  }
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const std::string c = colour(si);
    std::ostringstream pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!usable(s.x[i], axes.log_x) || !usable(s.y[i], axes.log_y)) continue;
      const double X = px(to_axis(s.x[i], axes.log_x)), Y = py(to_axis(s.y[i], axes.log_y));
      if (s.points) {
        o << "<circle cx=\"" << num(X) << "\" cy=\"" << num(Y) << "\" r=\"1.8\" fill=\"" << c
          << "\" fill-opacity=\"0.6\"/>\n";
      } else {
        pts << num(X) << ',' << num(Y) << ' ';
      }
    }
    if (!s.points) {
      o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\""
        << pts.str() << "\"/>\n";
    }
    const double ly = top + 12 + 16.0 * static_cast<double>(si);
    o << "<rect x=\"" << left + pw + 12 << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\""
      << c << "\"/>\n";
    o << "<text x=\"" << left + pw + 28 << "\" y=\"" << ly + 1 << "\">" << escape(s.label)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string bar_panels(const std::string& title, const std::vector<std::string>& categories,
                       const std::vector<BarPanel>& panels, int panel_width, int height) {
  const double top = 50, bottom = 110, gap = 30, left = 60;
  const int width = static_cast<int>(left + panels.size() * (panel_width + gap));
  const double ph = height - top - bottom;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << escape(title) << "</text>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double x0 = left + static_cast<double>(p) * (panel_width + gap);
    Range r;
    r.add(0.0);
    for (double v : panel.values)
      if (std::isfinite(v)) r.add(v);
    r.pad();
    auto py = [&](double v) { return top + ph - (v - r.lo) / (r.hi - r.lo) * ph; };
    o << "<text x=\"" << x0 + panel_width / 2.0 << "\" y=\"" << top - 10
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(panel.title) << "</text>\n";
    o << "<rect x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << panel_width << "\" height=\""
      << ph << "\" fill=\"none\" stroke=\"#333\"/>\n";
    o << "<line x1=\"" << x0 << "\" y1=\"" << num(py(0)) << "\" x2=\"" << x0 + panel_width
      << "\" y2=\"" << num(py(0)) << "\" stroke=\"#333\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = r.lo + (r.hi - r.lo) * t / 4.0;
      o << "<text x=\"" << x0 - 4 << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">"
        << tick_label(v, false) << "</text>\n";
    }
    const double slot = static_cast<double>(panel_width) / std::max<std::size_t>(1, categories.size());
    for (std::size_t c = 0; c < categories.size(); ++c) {
      const double cx = x0 + slot * (static_cast<double>(c) + 0.5);
      if (c < panel.values.size() && std::isfinite(panel.values[c])) {
        const double v = panel.values[c];
        const double y1 = py(std::max(v, 0.0)), y2 = py(std::min(v, 0.0));
        o << "<rect x=\"" << num(cx - slot * 0.35) << "\" y=\"" << num(y1) << "\" width=\""
          << num(slot * 0.7) << "\" height=\"" << num(std::max(y2 - y1, 0.5)) << "\" fill=\""
          << colour(c) << "\"/>\n";
      }
      o << "<text transform=\"translate(" << num(cx + 3) << "," << top + ph + 8
        << ") rotate(60)\">" << escape(categories[c]) << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace fdn::svg
