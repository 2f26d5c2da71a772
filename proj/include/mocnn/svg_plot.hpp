#pragma once

#include <string>
#include <vector>

namespace mocnn::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 640;
  int height = 400;
  bool log_y = false;
};

std::string line_chart(const std::vector<Series>& series, const ChartOptions& options);
std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      const ChartOptions& options);

}  // namespace mocnn::svg
