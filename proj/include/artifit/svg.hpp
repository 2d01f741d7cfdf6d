#pragma once

#include <string>
#include <utility>
#include <vector>

namespace artifit {

/// Minimal static line chart: one polyline per series over shared x values.
void write_line_chart_svg(
    const std::string& path, const std::string& title,
    const std::vector<double>& xs,
    const std::vector<std::pair<std::string, std::vector<double>>>& series);

}  // namespace artifit
