#include "comac/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace comac::svg {

namespace {

constexpr std::array<const char*, 10> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string render(const LineChart& c) {
    double lo = 0.0, hi = 1.0;
    for (const auto& s : c.series)
        for (double v : s.values)
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    const double left = 60, right = 170, top = 40, bottom = 70;
    const double pw = c.width - left - right;
    const double ph = c.height - top - bottom;
    const auto n = c.categories.size();
    auto x_at = [&](std::size_t i) { return left + (n <= 1 ? pw / 2 : pw * static_cast<double>(i) / static_cast<double>(n - 1)); };
    auto y_at = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << c.width << "\" height=\"" << c.height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(left) << "\" y=\"20\" font-size=\"14\">" << escape(c.title) << "</text>\n";

    for (int g = 0; g <= 5; ++g) {
        const double v = lo + (hi - lo) * g / 5.0;
        const double y = y_at(v);
        os << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + pw) << "\" y2=\"" << num(y)
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(v)
           << "</text>\n";
    }
    os << "<text transform=\"translate(14," << num(top + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
       << escape(c.y_label) << "</text>\n";
    for (std::size_t i = 0; i < n; ++i)
        os << "<text x=\"" << num(x_at(i)) << "\" y=\"" << num(top + ph + 16) << "\" text-anchor=\"end\" transform=\"rotate(-30 "
           << num(x_at(i)) << ' ' << num(top + ph + 16) << ")\">" << escape(c.categories[i]) << "</text>\n";

    for (std::size_t s = 0; s < c.series.size(); ++s) {
        const auto& series = c.series[s];
        const char* color = kPalette[s % kPalette.size()];
        std::string points;
        for (std::size_t i = 0; i < std::min(n, series.values.size()); ++i) {
            if (!std::isfinite(series.values[i]))
                continue;
            points += num(x_at(i)) + "," + num(y_at(series.values[i])) + " ";
            os << "<circle cx=\"" << num(x_at(i)) << "\" cy=\"" << num(y_at(series.values[i])) << "\" r=\"2.5\" fill=\""
               << color << "\"/>\n";
        }
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << points << "\"/>\n";
        const double ly = top + 14.0 * static_cast<double>(s);
        os << "<line x1=\"" << num(left + pw + 12) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + pw + 30)
           << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << num(left + pw + 34) << "\" y=\"" << num(ly + 4) << "\">" << escape(series.label)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace comac::svg
