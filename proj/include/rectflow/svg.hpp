#pragma once

#include <string>
#include <vector>

namespace rectflow {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  /// Markers only instead of a polyline.
  bool markers = false;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  /// Keep one unit on both axes the same length (for state-space plots).
  bool equal_aspect = false;
  int width = 640;
  int height = 440;
};

/// Self-contained SVG document. Non-finite points (and non-positive ones
/// on a log axis) are skipped.
std::string render_plot(const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace rectflow
