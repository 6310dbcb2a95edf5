#pragma once

#include <string>
#include <vector>

namespace entrep::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

/// Static line chart with linear axes and a legend.
void write_line_chart(const std::string& path, const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series);

} // namespace entrep::cli
