#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cmems {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

/// Reads a metrics log (one JSON object per line) into one series per loss term.
std::vector<Series> read_loss_curves(const std::filesystem::path& metrics_log);

/// Line chart as a standalone SVG document.
std::string render_lines_svg(const std::vector<Series>& series, const std::string& title,
                             const std::string& x_label, const std::string& y_label);
/// Vertical bar chart as a standalone SVG document.
std::string render_bars_svg(const std::vector<std::pair<std::string, double>>& bars, const std::string& title,
                            const std::string& y_label, double y_max = 1.0);

/// Per-class DSC bars from a report JSON document.
std::vector<std::pair<std::string, double>> dsc_bars(const nlohmann::json& report);

}  // namespace cmems
