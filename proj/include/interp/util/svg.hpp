#pragma once

#include <string>
#include <vector>

namespace interp::util::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional, same length as y
};

std::string escape(const std::string& s);

/// Vertical bars with optional error bars.
std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                      const std::vector<double>& values, const std::vector<double>& errors = {},
                      const std::string& y_label = {});

std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series);

/// Square matrix heatmap with row/column labels; NaN cells are left blank.
std::string heatmap(const std::string& title, const std::vector<std::string>& labels,
                    const std::vector<std::vector<double>>& values);

}  // namespace interp::util::svg
