#pragma once

#include <string>
#include <vector>

namespace fdn::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool points = false;  // markers instead of a polyline
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
};

// Line/scatter chart. Non-positive values are dropped on log axes. With
// `identity_guide` a dashed y = x line spans the shared range.
std::string plot(const Axes& axes, const std::vector<Series>& series, bool identity_guide = false,
                 int width = 640, int height = 440);

struct BarPanel {
  std::string title;
  std::vector<double> values;  // one per category
};

// One panel per metric, one bar per category, zero baseline drawn.
std::string bar_panels(const std::string& title, const std::vector<std::string>& categories,
                       const std::vector<BarPanel>& panels, int panel_width = 300,
                       int height = 380);

std::string escape(const std::string& text);
std::string colour(std::size_t i);

}  // namespace fdn::svg
