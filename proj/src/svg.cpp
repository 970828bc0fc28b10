// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace hyperalign {

namespace {

constexpr double kWidth = 480, kHeight = 400, kLeft = 60, kRight = 130, kTop = 36, kBottom = 48;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        if (ch == '<') out += "&lt;";
        else if (ch == '>') out += "&gt;";
        else if (ch == '&') out += "&amp;";
        else out += ch;
    }
    return out;
}

struct Frame {
    double x0, x1, y0, y1;

    double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

Frame fit(const std::vector<Series>& series) {
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series) {
        for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
        for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    const auto pad = [](double& lo, double& hi) {
        const double span = hi - lo;
        const double p = span > 0 ? 0.05 * span : std::max(std::abs(lo), 1.0) * 0.5;
        lo -= p;
        hi += p;
    };
    pad(x0, x1);
    pad(y0, y1);
    return {x0, x1, y0, y1};
}

void open_svg(std::ostringstream& os, const std::string& title, const Frame& f, const std::string& xl,
              const std::string& yl) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
       << "</text>\n";
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight << "\" height=\""
       << kHeight - kTop - kBottom << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = f.x0 + (f.x1 - f.x0) * k / 4, yv = f.y0 + (f.y1 - f.y0) * k / 4;
        os << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << num(kHeight - kBottom + 14)
           << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
        os << "<text x=\"" << num(kLeft - 4) << "\" y=\"" << num(f.py(yv) + 4) << "\" text-anchor=\"end\">" << num(yv)
           << "</text>\n";
    }
    os << "<text x=\"" << num((kLeft + kWidth - kRight) / 2) << "\" y=\"" << num(kHeight - 10)
       << "\" text-anchor=\"middle\">" << escape(xl) << "</text>\n";
    os << "<text x=\"14\" y=\"" << num((kTop + kHeight - kBottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << num((kTop + kHeight - kBottom) / 2) << ")\">" << escape(yl) << "</text>\n";
}

void legend(std::ostringstream& os, const std::vector<Series>& series) {
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double y = kTop + 12 + 16 * static_cast<double>(i);
        os << "<rect x=\"" << num(kWidth - kRight + 10) << "\" y=\"" << num(y - 8) << "\" width=\"10\" height=\"10\" fill=\""
           << kPalette[i % 8] << "\"/>\n";
        os << "<text x=\"" << num(kWidth - kRight + 24) << "\" y=\"" << num(y) << "\">" << escape(series[i].name)
           << "</text>\n";
    }
}

void save(const std::filesystem::path& path, std::ostringstream& os) {
    os << "</svg>\n";
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << os.str();
}

}  // namespace

void svg_line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<Series>& series) {
    const Frame f = fit(series);
    std::ostringstream os;
    open_svg(os, title, f, x_label, y_label);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        os << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kPalette[i % 8] << "\" points=\"";
        for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k)
            os << num(f.px(s.x[k])) << ',' << num(f.py(s.y[k])) << ' ';
        os << "\"/>\n";
    }
    legend(os, series);
    save(path, os);
}

void svg_scatter_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series) {
    const Frame f = fit(series);
    std::ostringstream os;
    open_svg(os, title, f, x_label, y_label);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k)
            os << "<circle r=\"2\" fill-opacity=\"0.6\" fill=\"" << kPalette[i % 8] << "\" cx=\"" << num(f.px(s.x[k]))
               << "\" cy=\"" << num(f.py(s.y[k])) << "\"/>\n";
    }
    legend(os, series);
    save(path, os);
}

void svg_samples_over_target(const std::filesystem::path& path, const std::string& title,
                             const TiltedTargetGrid& target, const Tensor& samples, std::span<const std::size_t> cond) {
    const GridSpec& g = target.grid;
    const Frame f{g.lo, g.hi, g.lo, g.hi};
    std::ostringstream os;
    open_svg(os, title, f, "x1", "x2");

    // Marching squares on cell centers. Saddle cells pair their four
    // crossings in edge order.
    const std::size_t n = g.resolution;
    for (std::size_t c = 0; c < target.num_conditions(); ++c) {
        double peak = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, target.density(c, i, j));
        const auto dens = [&](std::size_t i, std::size_t j) { return target.density(c, i, j); };
        for (double frac : {0.05, 0.25, 0.5, 0.75}) {
            const double level = frac * peak;
            os << "<path fill=\"none\" stroke=\"#888\" stroke-width=\"0.8\" d=\"";
            for (std::size_t i = 0; i + 1 < n; ++i) {
                for (std::size_t j = 0; j + 1 < n; ++j) {
                    const double v[4] = {dens(i, j), dens(i + 1, j), dens(i + 1, j + 1), dens(i, j + 1)};
                    const double xs[4] = {g.center(i), g.center(i + 1), g.center(i + 1), g.center(i)};
                    const double ys[4] = {g.center(j), g.center(j), g.center(j + 1), g.center(j + 1)};
                    std::vector<std::pair<double, double>> pts;
                    for (int e = 0; e < 4; ++e) {
                        const int a = e, b = (e + 1) % 4;
                        if ((v[a] >= level) == (v[b] >= level)) continue;
                        const double t = (level - v[a]) / (v[b] - v[a]);
                        pts.emplace_back(xs[a] + t * (xs[b] - xs[a]), ys[a] + t * (ys[b] - ys[a]));
                    }
                    for (std::size_t p = 0; p + 1 < pts.size(); p += 2)
                        os << 'M' << num(f.px(pts[p].first)) << ' ' << num(f.py(pts[p].second)) << 'L'
                           << num(f.px(pts[p + 1].first)) << ' ' << num(f.py(pts[p + 1].second));
                }
            }
            os << "\"/>\n";
        }
    }
    const std::size_t shown = std::min<std::size_t>(samples.dim(0), 2000);
    for (std::size_t i = 0; i < shown; ++i) {
        os << "<circle r=\"1.4\" fill-opacity=\"0.5\" fill=\"" << kPalette[cond[i] % 8] << "\" cx=\"" << num(f.px(samples.at(i, 0)))
           << "\" cy=\"" << num(f.py(samples.at(i, 1))) << "\"/>\n";
    }
    save(path, os);
}

}  // namespace hyperalign
