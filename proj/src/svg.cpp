#include "knnlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "knnlab/common.hpp"

namespace knnlab::svg {

namespace {

constexpr double kWidth = 800, kHeight = 500;
constexpr double kLeft = 70, kRight = 30, kTop = 50, kBottom = 60;

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (!std::isfinite(xmin)) {  // nothing plottable
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * plot_w; };
    auto py = [&](double y) { return kTop + (1.0 - (y - ymin) / (ymax - ymin)) * plot_h; };

    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << title << "</text>\n";

    // Axes with 5 ticks each.
    f << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
      << "\" y2=\"" << kTop + plot_h << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kTop + plot_h << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double tx = xmin + (xmax - xmin) * i / 4.0;
        double ty = ymin + (ymax - ymin) * i / 4.0;
        f << "<line x1=\"" << px(tx) << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << px(tx)
          << "\" y2=\"" << kTop + plot_h + 5 << "\" stroke=\"black\"/>\n"
          << "<text x=\"" << px(tx) << "\" y=\"" << kTop + plot_h + 20
          << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(tx) << "</text>\n"
          << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << py(ty) << "\" x2=\"" << kLeft << "\" y2=\""
          << py(ty) << "\" stroke=\"black\"/>\n"
          << "<text x=\"" << kLeft - 8 << "\" y=\"" << py(ty) + 4
          << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(ty) << "</text>\n";
    }
    f << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 15
      << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n"
      << "<text x=\"18\" y=\"" << kTop + plot_h / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
      << kTop + plot_h / 2 << ")\">" << y_label << "</text>\n";

    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % (sizeof kColors / sizeof *kColors)];
        f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < series[s].x.size(); ++i) {
            if (!std::isfinite(series[s].x[i]) || !std::isfinite(series[s].y[i])) continue;
            f << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
        }
        f << "\"/>\n";
        f << "<text x=\"" << kLeft + plot_w - 6 << "\" y=\"" << kTop + 16 + 16 * double(s)
          << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color << "\">" << series[s].name
          << "</text>\n";
    }
    f << "</svg>\n";
    if (!f.flush()) throw FormatError("write failed: " + path);
}

}  // namespace knnlab::svg
