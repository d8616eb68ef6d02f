#pragma once

#include <string>
#include <vector>

namespace fewshot::svg {

struct Series {
    std::string name;
    std::vector<double> ys;  // plotted against index 0..n-1
};

// Small, dependency-free chart writers. Each returns a complete SVG document.
std::string line_chart(const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label);

std::string bar_chart(const std::vector<std::pair<std::string, double>>& bars,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label);

std::string heatmap(const std::vector<std::vector<double>>& cells,
                    const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::string& title);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace fewshot::svg
