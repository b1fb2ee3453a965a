#pragma once
// Artifact writers: atomic text/JSON output (temp file + rename, so readers
// never see a half-written file) and a minimal self-contained SVG line plot.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace milne {

inline void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp);
        out << content;
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("rename failed: " + path);
}

inline void write_json_atomic(const std::string& path, const nlohmann::json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

struct SvgSeries {
    std::string label;
    std::string color = "#1f6fb2";
    std::vector<std::pair<double, double>> points;
};

// minimal scatter/line plot; log-log when requested (data must be positive)
inline std::string svg_line_plot(const std::vector<SvgSeries>& series,
                                 const std::string& title, bool loglog = false) {
    const int W = 640, H = 440, mL = 70, mR = 20, mT = 40, mB = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    auto tx = [&](double v) { return loglog ? std::log10(v) : v; };
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            xmin = std::min(xmin, tx(x)); xmax = std::max(xmax, tx(x));
            ymin = std::min(ymin, tx(y)); ymax = std::max(ymax, tx(y));
        }
    if (!(xmax > xmin)) { xmax = xmin + 1.0; xmin -= 1.0; }
    if (!(ymax > ymin)) { ymax = ymin + 1.0; ymin -= 1.0; }
    auto px = [&](double v) {
        return mL + (tx(v) - xmin) / (xmax - xmin) * (W - mL - mR);
    };
    auto py = [&](double v) {
        return H - mB - (tx(v) - ymin) / (ymax - ymin) * (H - mT - mB);
    };
    std::ostringstream out;
    out.precision(6);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='"
        << H << "' viewBox='0 0 " << W << ' ' << H << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << W / 2 << "' y='24' text-anchor='middle' "
        << "font-family='sans-serif' font-size='16'>" << title << "</text>\n"
        << "<rect x='" << mL << "' y='" << mT << "' width='" << W - mL - mR
        << "' height='" << H - mT - mB
        << "' fill='none' stroke='#444' stroke-width='1'/>\n";
    int legend_y = mT + 16;
    for (const auto& s : series) {
        out << "<polyline fill='none' stroke='" << s.color
            << "' stroke-width='1.5' points='";
        for (auto [x, y] : s.points) out << px(x) << ',' << py(y) << ' ';
        out << "'/>\n";
        for (auto [x, y] : s.points)
            out << "<circle cx='" << px(x) << "' cy='" << py(y)
                << "' r='3' fill='" << s.color << "'/>\n";
        if (!s.label.empty()) {
            out << "<text x='" << W - mR - 8 << "' y='" << legend_y
                << "' text-anchor='end' font-family='sans-serif' font-size='12' "
                << "fill='" << s.color << "'>" << s.label << "</text>\n";
            legend_y += 16;
        }
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace milne
