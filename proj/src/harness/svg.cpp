#include "dvn/harness/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "dvn/errors.hpp"

namespace dvn::harness {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 70, kTop = 40, kBottom = 55;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '&': o += "&amp;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

void write_svg(std::ostream& out, const LinePlot& plot) {
    if (!(plot.y_max > plot.y_min) || !(plot.y2_max > plot.y2_min)) throw ArgumentError("empty y range");
    double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
    for (const auto& s : plot.series) {
        if (s.x.size() != s.y.size()) throw ArgumentError("series '" + s.label + "' has mismatched x and y");
        for (double x : s.x)
            if (std::isfinite(x)) {
                x_lo = std::min(x_lo, x);
                x_hi = std::max(x_hi, x);
            }
    }
    if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1;
    if (x_hi == x_lo) x_lo -= 0.5, x_hi += 0.5;

    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto sx = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * pw; };
    auto sy = [&](double y, bool secondary) {
        const double lo = secondary ? plot.y2_min : plot.y_min, hi = secondary ? plot.y2_max : plot.y_max;
        return kTop + (1.0 - (std::clamp(y, lo, hi) - lo) / (hi - lo)) * ph;
    };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(plot.title)
        << "</text>\n";
    out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";

    for (int i = 0; i <= 5; ++i) {
        const double t = i / 5.0;
        const double x = x_lo + t * (x_hi - x_lo);
        const double px = sx(x);
        out << "<line x1=\"" << coord(px) << "\" y1=\"" << kTop + ph << "\" x2=\"" << coord(px) << "\" y2=\""
            << kTop + ph + 5 << "\" stroke=\"black\"/>";
        out << "<text x=\"" << coord(px) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">" << fmt(x)
            << "</text>\n";
        const double y = plot.y_min + t * (plot.y_max - plot.y_min);
        const double py = sy(y, false);
        out << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << coord(py) << "\" x2=\"" << kLeft << "\" y2=\"" << coord(py)
            << "\" stroke=\"black\"/>";
        out << "<text x=\"" << kLeft - 8 << "\" y=\"" << coord(py + 4) << "\" text-anchor=\"end\">" << fmt(y)
            << "</text>\n";
        if (!plot.y2_label.empty()) {
            const double y2 = plot.y2_min + t * (plot.y2_max - plot.y2_min);
            const double py2 = sy(y2, true);
            out << "<line x1=\"" << kLeft + pw << "\" y1=\"" << coord(py2) << "\" x2=\"" << kLeft + pw + 5
                << "\" y2=\"" << coord(py2) << "\" stroke=\"black\"/>";
            out << "<text x=\"" << kLeft + pw + 8 << "\" y=\"" << coord(py2 + 4) << "\">" << fmt(y2) << "</text>\n";
        }
    }
    out << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
        << escape(plot.x_label) << "</text>\n";
    out << "<text transform=\"translate(18," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << escape(plot.y_label) << "</text>\n";
    if (!plot.y2_label.empty())
        out << "<text transform=\"translate(" << kWidth - 14 << "," << kTop + ph / 2
            << ") rotate(90)\" text-anchor=\"middle\">" << escape(plot.y2_label) << "</text>\n";

    std::size_t ci = 0;
    for (const auto& s : plot.series) {
        const char* color = kColors[ci++ % std::size(kColors)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\"";
        if (s.dashed) out << " stroke-dasharray=\"6,4\"";
        out << " points=\"";
        bool first = true;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if (!first) out << ' ';
            out << coord(sx(s.x[i])) << ',' << coord(sy(s.y[i], s.secondary_axis));
            first = false;
        }
        out << "\"/>\n";
        const double ly = kTop + 14 + 16.0 * static_cast<double>(ci - 1);
        out << "<line x1=\"" << kLeft + 10 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + 34 << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "")
            << "/>";
        out << "<text x=\"" << kLeft + 40 << "\" y=\"" << ly + 4 << "\">" << escape(s.label)
            << (s.secondary_axis ? " (right axis)" : "") << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace dvn::harness
