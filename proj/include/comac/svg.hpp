#pragma once

#include <string>
#include <vector>

namespace comac::svg {

struct Series {
    std::string label;
    std::vector<double> values;  // one per x category
};

struct LineChart {
    std::string title;
    std::string y_label;
    std::vector<std::string> categories;
    std::vector<Series> series;
    int width = 720;
    int height = 400;
};

/// Self-contained SVG markup. The y axis spans [0, 1] unless a value falls
/// outside it, in which case it is widened to fit.
std::string render(const LineChart& chart);

}  // namespace comac::svg
