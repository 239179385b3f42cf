#pragma once

// Minimal native SVG charts: polylines and scatter markers with axes.

#include <filesystem>
#include <string>
#include <vector>

namespace anchorlab::svg {

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
  bool lines = true;    // false: markers only
};

std::string render(const Chart& chart);
void write(const Chart& chart, const std::filesystem::path& path);

}  // namespace anchorlab::svg
