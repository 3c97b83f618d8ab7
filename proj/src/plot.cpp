#include "cmems/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <sstream>

#include "cmems/datamodel.hpp"

namespace cmems {

namespace {

constexpr int kWidth = 720, kHeight = 420;
constexpr int kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

void header(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
       << "</text>\n";
}

void axes(std::ostringstream& os, double y0, double y1, const std::string& x_label, const std::string& y_label) {
    const int pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = y0 + (y1 - y0) * i / 4.0;
        const double y = kTop + ph - ph * i / 4.0;
        os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + pw << "\" y1=\"" << y << "\" y2=\"" << y
           << "\" stroke=\"#ddd\"/>\n"
           << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << std::setprecision(3) << v
           << "</text>\n";
    }
    os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
       << escape(x_label) << "</text>\n"
       << "<text transform=\"translate(18," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << escape(y_label) << "</text>\n";
}

}  // namespace

std::vector<Series> read_loss_curves(const std::filesystem::path& metrics_log) {
    std::ifstream is(metrics_log);
    if (!is) throw IngestionError("missing or unreadable metrics log: " + metrics_log.string());
    const char* keys[] = {"l_total", "l_e", "l_s", "l_cmip", "l_cmfp"};
    std::vector<Series> out;
    for (const char* k : keys) out.push_back({k, {}});
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const double it = j.at("iter").get<double>();
        for (auto& s : out)
            if (j.contains(s.name)) s.points.emplace_back(it, j[s.name].get<double>());
    }
    return out;
}

std::string render_lines_svg(const std::vector<Series>& series, const std::string& title,
                             const std::string& x_label, const std::string& y_label) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = 0, y1 = -x0;
    for (const auto& s : series) {
        for (auto [x, y] : s.points) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y1 = 1;
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    const int pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    std::ostringstream os;
    header(os, title);
    axes(os, y0, y1, x_label, y_label);
    os << std::setprecision(6);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* color = kColors[i % std::size(kColors)];
        if (!s.points.empty()) {
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (auto [x, y] : s.points)
                os << kLeft + (x - x0) / (x1 - x0) * pw << "," << kTop + ph - (y - y0) / (y1 - y0) * ph << " ";
            os << "\"/>\n";
        }
        const int ly = kTop + 14 + static_cast<int>(i) * 18;
        os << "<line x1=\"" << kLeft + pw + 12 << "\" x2=\"" << kLeft + pw + 32 << "\" y1=\"" << ly << "\" y2=\""
           << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
           << "<text x=\"" << kLeft + pw + 38 << "\" y=\"" << ly + 4 << "\">" << escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string render_bars_svg(const std::vector<std::pair<std::string, double>>& bars, const std::string& title,
                            const std::string& y_label, double y_max) {
    const int pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    std::ostringstream os;
    header(os, title);
    axes(os, 0.0, y_max, "", y_label);
    const double slot = bars.empty() ? pw : static_cast<double>(pw) / bars.size();
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const double v = std::clamp(bars[i].second, 0.0, y_max);
        const double h = v / y_max * ph;
        const double x = kLeft + slot * i + slot * 0.15;
        os << "<rect x=\"" << x << "\" y=\"" << kTop + ph - h << "\" width=\"" << slot * 0.7 << "\" height=\"" << h
           << "\" fill=\"" << kColors[i % std::size(kColors)] << "\"/>\n"
           << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kTop + ph - h - 4 << "\" text-anchor=\"middle\">"
           << std::setprecision(3) << bars[i].second << "</text>\n"
           << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">"
           << escape(bars[i].first) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::vector<std::pair<std::string, double>> dsc_bars(const nlohmann::json& report) {
    std::vector<std::pair<std::string, double>> out;
    if (report.contains("dsc_avg")) out.emplace_back("average", report["dsc_avg"].get<double>());
    if (report.contains("per_class"))
        for (const auto& [name, v] : report["per_class"].items()) out.emplace_back(name, v.at("dsc").get<double>());
    return out;
}

}  // namespace cmems
