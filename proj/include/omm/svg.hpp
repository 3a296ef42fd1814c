#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "omm/io.hpp"

namespace omm {

struct plot_series {
    std::string label;
    std::vector<double> x, y;
};

struct plot_options {
    int width = 860;
    int height = 520;
    std::string title, xlabel, ylabel;
    bool logy = false;
};

namespace svgdetail {

inline std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f6fb4", "#d14a3d", "#3c9e56", "#8256b0",
                                   "#c78f2c", "#4aadb8", "#8a8a8a"};
    return colors[i % 7];
}

struct frame {
    double x_min, x_max, y_min, y_max;  // data range (y already log10 if logy)
    int left = 72, right = 24, top = 46, bottom = 54;
    int width, height;

    double px(double x) const {
        return left + (x - x_min) / (x_max - x_min) * (width - left - right);
    }
    double py(double y) const {
        return height - bottom - (y - y_min) / (y_max - y_min) * (height - top - bottom);
    }
};

inline void pad_if_flat(double& lo, double& hi) {
    if (!(hi > lo)) {
        const double pad = std::max(1.0, std::abs(lo)) * 0.5;
        lo -= pad;
        hi += pad;
    }
}

inline void axes(std::ofstream& out, const frame& f, const plot_options& opt) {
    out << "<rect x='" << f.left << "' y='" << f.top << "' width='" << (f.width - f.left - f.right)
        << "' height='" << (f.height - f.top - f.bottom)
        << "' fill='none' stroke='#333' stroke-width='1'/>\n";
    const int ticks = 5;
    for (int i = 0; i <= ticks; ++i) {
        const double tx = f.x_min + (f.x_max - f.x_min) * i / ticks;
        const double ty = f.y_min + (f.y_max - f.y_min) * i / ticks;
        out << "<line x1='" << num(f.px(tx)) << "' y1='" << (f.height - f.bottom) << "' x2='"
            << num(f.px(tx)) << "' y2='" << (f.height - f.bottom + 5)
            << "' stroke='#333' stroke-width='1'/>\n";
        out << "<text x='" << num(f.px(tx)) << "' y='" << (f.height - f.bottom + 18)
            << "' font-size='11' text-anchor='middle'>" << tick_label(tx) << "</text>\n";
        const double yval = opt.logy ? std::pow(10.0, ty) : ty;
        out << "<line x1='" << (f.left - 5) << "' y1='" << num(f.py(ty)) << "' x2='" << f.left
            << "' y2='" << num(f.py(ty)) << "' stroke='#333' stroke-width='1'/>\n";
        out << "<text x='" << (f.left - 8) << "' y='" << num(f.py(ty) + 4)
            << "' font-size='11' text-anchor='end'>" << tick_label(yval) << "</text>\n";
    }
    if (!opt.title.empty())
        out << "<text x='" << f.width / 2 << "' y='24' font-size='15' text-anchor='middle'>"
            << esc(opt.title) << "</text>\n";
    if (!opt.xlabel.empty())
        out << "<text x='" << f.width / 2 << "' y='" << (f.height - 14)
            << "' font-size='12' text-anchor='middle'>" << esc(opt.xlabel) << "</text>\n";
    if (!opt.ylabel.empty())
        out << "<text x='16' y='" << f.height / 2 << "' font-size='12' text-anchor='middle' "
            << "transform='rotate(-90 16 " << f.height / 2 << ")'>" << esc(opt.ylabel)
            << "</text>\n";
}

inline frame fit(const std::vector<plot_series>& series, const plot_options& opt) {
    double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
    double y_lo = x_lo, y_hi = -x_lo;
    std::size_t used = 0;
    for (const plot_series& s : series) {
        if (s.x.size() != s.y.size())
            throw std::invalid_argument("plot series length mismatch: " + s.label);
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            double y = s.y[i];
            if (!std::isfinite(s.x[i]) || !std::isfinite(y)) continue;
            if (opt.logy) {
                if (!(y > 0.0)) continue;
                y = std::log10(y);
            }
            x_lo = std::min(x_lo, s.x[i]);
            x_hi = std::max(x_hi, s.x[i]);
            y_lo = std::min(y_lo, y);
            y_hi = std::max(y_hi, y);
            ++used;
        }
    }
    if (used == 0) throw std::invalid_argument("plot: no plottable points");
    pad_if_flat(x_lo, x_hi);
    pad_if_flat(y_lo, y_hi);
    frame f{x_lo, x_hi, y_lo, y_hi};
    f.width = opt.width;
    f.height = opt.height;
    return f;
}

inline void legend(std::ofstream& out, const frame& f, const std::vector<plot_series>& series) {
    int row = 0;
    for (std::size_t s = 0; s < series.size(); ++s) {
        if (series[s].label.empty()) continue;
        const int y = f.top + 16 + 16 * row++;
        out << "<rect x='" << (f.width - f.right - 150) << "' y='" << (y - 9)
            << "' width='12' height='4' fill='" << palette(s) << "'/>\n";
        out << "<text x='" << (f.width - f.right - 133) << "' y='" << y << "' font-size='11'>"
            << esc(series[s].label) << "</text>\n";
    }
}

}  // namespace svgdetail

inline void write_line_plot(const std::string& path, const std::vector<plot_series>& series,
                            const plot_options& opt) {
    using namespace svgdetail;
    const frame f = fit(series, opt);
    std::ofstream out = open_out(path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << f.width << "' height='"
        << f.height << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    axes(out, f, opt);
    for (std::size_t s = 0; s < series.size(); ++s) {
        std::string points;
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            double y = series[s].y[i];
            if (!std::isfinite(series[s].x[i]) || !std::isfinite(y)) continue;
            if (opt.logy) {
                if (!(y > 0.0)) continue;
                y = std::log10(y);
            }
            points += num(f.px(series[s].x[i])) + "," + num(f.py(y)) + " ";
        }
        if (points.empty()) continue;
        out << "<polyline points='" << points << "' fill='none' stroke='" << palette(s)
            << "' stroke-width='1.5'/>\n";
    }
    legend(out, f, series);
    out << "</svg>\n";
}

inline void write_scatter(const std::string& path, const std::vector<plot_series>& series,
                          const plot_options& opt) {
    using namespace svgdetail;
    const frame f = fit(series, opt);
    std::ofstream out = open_out(path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << f.width << "' height='"
        << f.height << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    axes(out, f, opt);
    for (std::size_t s = 0; s < series.size(); ++s) {
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            double y = series[s].y[i];
            if (!std::isfinite(series[s].x[i]) || !std::isfinite(y)) continue;
            if (opt.logy) {
                if (!(y > 0.0)) continue;
                y = std::log10(y);
            }
            out << "<circle cx='" << num(f.px(series[s].x[i])) << "' cy='" << num(f.py(y))
                << "' r='3' fill='" << palette(s) << "' fill-opacity='0.7'/>\n";
        }
    }
    legend(out, f, series);
    out << "</svg>\n";
}

// Cell grid shaded white -> blue -> red by value / max; rows map to y from
// the top, columns to x.
inline void write_heatmap(const std::string& path,
                          const Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>& m,
                          const std::string& title) {
    using namespace svgdetail;
    if (m.size() == 0) throw std::invalid_argument("heatmap: empty matrix");
    const long vmax = std::max<long>(1, m.maxCoeff());
    const int cell = std::clamp(static_cast<int>(900 / std::max<Eigen::Index>(m.cols(), 1)), 2, 24);
    const int left = 40, top = 40;
    const int w = left + cell * static_cast<int>(m.cols()) + 20;
    const int h = top + cell * static_cast<int>(m.rows()) + 30;
    std::ofstream out = open_out(path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    if (!title.empty())
        out << "<text x='" << w / 2 << "' y='24' font-size='14' text-anchor='middle'>"
            << esc(title) << "</text>\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double t = static_cast<double>(m(i, j)) / static_cast<double>(vmax);
            int r, g, b;
            if (t <= 0.5) {  // white (1,1,1) to blue (0.2,0.4,0.8)
                const double u = t * 2.0;
                r = static_cast<int>(255 * (1.0 - 0.8 * u));
                g = static_cast<int>(255 * (1.0 - 0.6 * u));
                b = static_cast<int>(255 * (1.0 - 0.2 * u));
            } else {  // blue to dark red (0.7,0.1,0.1)
                const double u = (t - 0.5) * 2.0;
                r = static_cast<int>(255 * (0.2 + 0.5 * u));
                g = static_cast<int>(255 * (0.4 - 0.3 * u));
                b = static_cast<int>(255 * (0.8 - 0.7 * u));
            }
            out << "<rect x='" << (left + cell * j) << "' y='" << (top + cell * i) << "' width='"
                << cell << "' height='" << cell << "' fill='rgb(" << r << "," << g << "," << b
                << ")'/>\n";
        }
    }
    out << "<text x='" << left << "' y='" << (h - 8) << "' font-size='11'>max count " << vmax
        << "</text>\n</svg>\n";
}

}  // namespace omm
