#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dvn::harness {

struct LineSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    bool secondary_axis = false;  // plotted against the right-hand axis
    bool dashed = false;
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::string y2_label;  // empty: no right-hand axis
    double y_min = 0.0, y_max = 1.0;
    double y2_min = 0.0, y2_max = 1.0;
    std::vector<LineSeries> series;
};

/// Minimal standalone SVG line chart with a legend. x range is taken from
/// the data; non-finite points are skipped.
void write_svg(std::ostream& out, const LinePlot& plot);

}  // namespace dvn::harness
