#ifndef KNNLAB_SVG_HPP_
#define KNNLAB_SVG_HPP_

#include <string>
#include <vector>

namespace knnlab::svg {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

// Standalone SVG line chart: axes with tick labels, one polyline per series,
// legend. Non-finite points are skipped.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series);

}  // namespace knnlab::svg

#endif  // KNNLAB_SVG_HPP_
