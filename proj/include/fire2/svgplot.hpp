#pragma once

#include <string>
#include <vector>

namespace fire2::plot {

struct Series {
    std::string name;
    std::vector<double> ys;
};

/// Static SVG line plot; one polyline per series, legend in the top-right.
void write_line_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<double>& xs,
                     const std::vector<Series>& series);

}  // namespace fire2::plot
