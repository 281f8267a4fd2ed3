#pragma once

#include "uniot/types.hpp"

#include <string>
#include <vector>

namespace uniot::svg {

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  int group = 0;  // index into the legend
};

std::string scatter(const std::vector<ScatterPoint>& points, const std::vector<std::string>& groups,
                    const std::string& title);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                       const std::string& y_label);

/// Rows of `points` projected on their top-2 principal directions.
Matrix pca_2d(const Matrix& points);

}  // namespace uniot::svg
