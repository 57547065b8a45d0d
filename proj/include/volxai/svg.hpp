#pragma once

// Minimal static SVG charts for reports.

#include <string>
#include <utility>
#include <vector>

namespace volxai::svg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
  bool step = false;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
};

std::string line_chart(const Axes& axes, const std::vector<Series>& series,
                       const std::string& footnote = {});

struct Bar {
  std::string label;
  double value = 0.0;
  /// Optional reference marker drawn on the bar's row (e.g. class mean).
  bool has_marker = false;
  double marker = 0.0;
  std::string group;  // colour key, e.g. modality
};

/// Horizontal bars around a zero axis, one row per bar, top to bottom.
std::string bar_chart(const std::string& title, const std::string& value_label,
                      const std::vector<Bar>& bars, const std::string& footnote = {});

}  // namespace volxai::svg
