#include "fire2/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fire2::plot {

namespace {

const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                         "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

}  // namespace

void write_line_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<double>& xs,
                     const std::vector<Series>& series) {
    if (xs.empty() || series.empty())
        throw std::invalid_argument("write_line_plot: nothing to plot");
    for (const auto& s : series)
        if (s.ys.size() != xs.size())
            throw std::invalid_argument("write_line_plot: series '" + s.name + "' length mismatch");

    const int W = 640, H = 420, ml = 70, mr = 160, mt = 50, mb = 55;
    double xmin = xs[0], xmax = xs[0], ymin = 1e300, ymax = -1e300;
    for (double x : xs) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    for (const auto& s : series)
        for (double y : s.ys) {
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) {
        ymax += 0.5;
        ymin -= 0.5;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_line_plot: cannot write " + path);
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
       << "</text>\n";

    // axes + ticks
    os << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
       << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
       << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x='" << px(xv) << "' y='" << H - mb + 18
           << "' text-anchor='middle' font-size='11'>" << fmt(xv) << "</text>\n";
        os << "<text x='" << ml - 8 << "' y='" << py(yv) + 4
           << "' text-anchor='end' font-size='11'>" << fmt(yv) << "</text>\n";
        os << "<line x1='" << ml << "' y1='" << py(yv) << "' x2='" << W - mr << "' y2='" << py(yv)
           << "' stroke='#dddddd'/>\n";
    }
    os << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12
       << "' text-anchor='middle' font-size='13'>" << xlabel << "</text>\n";
    os << "<text x='18' y='" << (mt + H - mb) / 2 << "' font-size='13' transform='rotate(-90 18 "
       << (mt + H - mb) / 2 << ")' text-anchor='middle'>" << ylabel << "</text>\n";

    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % 8];
        os << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
        for (size_t i = 0; i < xs.size(); ++i) os << px(xs[i]) << "," << py(series[s].ys[i]) << " ";
        os << "'/>\n";
        for (size_t i = 0; i < xs.size(); ++i)
            os << "<circle cx='" << px(xs[i]) << "' cy='" << py(series[s].ys[i])
               << "' r='3' fill='" << color << "'/>\n";
        const int ly = mt + 18 * static_cast<int>(s);
        os << "<line x1='" << W - mr + 10 << "' y1='" << ly << "' x2='" << W - mr + 34 << "' y2='"
           << ly << "' stroke='" << color << "' stroke-width='2'/>\n";
        os << "<text x='" << W - mr + 40 << "' y='" << ly + 4 << "' font-size='12'>"
           << series[s].name << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace fire2::plot
