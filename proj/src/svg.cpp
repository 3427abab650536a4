#include "bdc/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace bdc {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

const char* kTitles[4] = {"Parameter certainty", "RFX certainty",
                          "Info gain (parameters)", "Info gain (models)"};
const char* kKeys[4] = {"s_theta", "s_epsilon", "d_params", "d_models"};
const char* kFill = "#4878a8";

}  // namespace

void write_report_svg(const ComparisonReport& report, const std::filesystem::path& path) {
    const int panel_w = 300, panel_h = 220, margin = 46, gap = 24;
    const int width = 2 * panel_w + 3 * gap;
    const int height = 2 * panel_h + 3 * gap;
    const std::size_t n = report.datasets.size();

    std::ofstream out(path);
    if (!out) throw Error("write_report_svg: cannot open " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

    for (int p = 0; p < 4; ++p) {
        const int px = gap + (p % 2) * (panel_w + gap);
        const int py = gap + (p / 2) * (panel_h + gap);
        const auto it = report.relative.find(kKeys[p]);
        std::vector<double> rel(n, 0.0);
        double hi = 0.0;
        if (it != report.relative.end()) {
            for (std::size_t i = 0; i < n && i < it->second.size(); ++i) {
                rel[i] = std::isfinite(it->second[i]) ? it->second[i] : 0.0;
                hi = std::max(hi, rel[i]);
            }
        }
        if (hi <= 0.0) hi = 1.0;

        out << "<text x=\"" << px + panel_w / 2 << "\" y=\"" << py + 14
            << "\" text-anchor=\"middle\" font-weight=\"bold\">" << kTitles[p] << "</text>\n";

        const int plot_x = px + margin, plot_y = py + 24;
        const int plot_w = panel_w - margin - 10, plot_h = panel_h - 24 - 34;
        out << "<line x1=\"" << plot_x << "\" y1=\"" << plot_y + plot_h << "\" x2=\""
            << plot_x + plot_w << "\" y2=\"" << plot_y + plot_h
            << "\" stroke=\"black\"/>\n";
        out << "<line x1=\"" << plot_x << "\" y1=\"" << plot_y << "\" x2=\"" << plot_x
            << "\" y2=\"" << plot_y + plot_h << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << px + 12 << "\" y=\"" << plot_y + plot_h / 2
            << "\" text-anchor=\"middle\" transform=\"rotate(-90 " << px + 12 << " "
            << plot_y + plot_h / 2 << ")\">relative nats</text>\n";
        out << "<text x=\"" << plot_x - 4 << "\" y=\"" << plot_y + 4
            << "\" text-anchor=\"end\">" << fmt(hi) << "</text>\n";
        out << "<text x=\"" << plot_x - 4 << "\" y=\"" << plot_y + plot_h + 4
            << "\" text-anchor=\"end\">0</text>\n";

        const double slot = n > 0 ? static_cast<double>(plot_w) / static_cast<double>(n) : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double bar_w = slot * 0.6;
            const double x = plot_x + slot * static_cast<double>(i) + slot * 0.2;
            const double h = plot_h * (rel[i] / hi);
            out << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(plot_y + plot_h - h)
                << "\" width=\"" << fmt(bar_w) << "\" height=\"" << fmt(h) << "\" fill=\""
                << kFill << "\"";
            if (!report.datasets[i].ok) out << " opacity=\"0.25\"";
            out << "/>\n";
            out << "<text x=\"" << fmt(x + bar_w / 2) << "\" y=\"" << plot_y + plot_h + 14
                << "\" text-anchor=\"middle\">" << report.datasets[i].label << "</text>\n";
        }
    }
    out << "</svg>\n";
    if (!out) throw Error("write_report_svg: write failed for " + path.string());
}

}  // namespace bdc
