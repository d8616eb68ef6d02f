#include "fewshot/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fewshot::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 64.0, kRight = 24.0, kTop = 40.0, kBottom = 48.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

void open_doc(std::ostringstream& s, const std::string& title) {
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"15\">" << escape(title) << "</text>\n";
}

void axes(std::ostringstream& s, const std::string& x_label, const std::string& y_label) {
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\""
      << kWidth - kRight << "\" y2=\"" << kHeight - kBottom
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kHeight - kBottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    s << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << escape(x_label) << "</text>\n";
    s << "<text x=\"16\" y=\"" << (kTop + kHeight - kBottom) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
      << "transform=\"rotate(-90 16 " << (kTop + kHeight - kBottom) / 2 << ")\">"
      << escape(y_label) << "</text>\n";
}

struct Range {
    double lo = 0.0, hi = 1.0;
};

Range pad_range(double lo, double hi) {
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = (hi - lo) * 0.06;
    return {lo - pad, hi + pad};
}

void y_ticks(std::ostringstream& s, const Range& r) {
    for (int i = 0; i <= 4; ++i) {
        const double v = r.lo + (r.hi - r.lo) * i / 4.0;
        const double y = kHeight - kBottom - (kHeight - kTop - kBottom) * i / 4.0;
        s << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kLeft << "\" y2=\""
          << y << "\" stroke=\"black\"/>\n";
        s << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + 4
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(v)
          << "</text>\n";
    }
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label) {
    if (series.empty()) throw std::invalid_argument("no series to plot");
    std::size_t max_len = 0;
    double lo = 0.0, hi = 0.0;
    bool seen = false;
    for (const Series& sr : series) {
        max_len = std::max(max_len, sr.ys.size());
        for (double v : sr.ys) {
            lo = seen ? std::min(lo, v) : v;
            hi = seen ? std::max(hi, v) : v;
            seen = true;
        }
    }
    if (max_len < 1) throw std::invalid_argument("empty series");
    const Range r = pad_range(lo, hi);

    std::ostringstream s;
    open_doc(s, title);
    axes(s, x_label, y_label);
    y_ticks(s, r);

    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    const std::size_t denom = std::max<std::size_t>(1, max_len - 1);
    for (int i = 0; i <= 4; ++i) {
        const std::size_t step = denom * static_cast<std::size_t>(i) / 4;
        const double x = kLeft + plot_w * static_cast<double>(step) / static_cast<double>(denom);
        s << "<text x=\"" << x << "\" y=\"" << kHeight - kBottom + 16
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << step
          << "</text>\n";
    }

    for (std::size_t k = 0; k < series.size(); ++k) {
        const Series& sr = series[k];
        if (sr.ys.empty()) continue;
        const char* color = kPalette[k % (sizeof(kPalette) / sizeof(kPalette[0]))];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < sr.ys.size(); ++i) {
            const double x = kLeft + plot_w * static_cast<double>(i) / static_cast<double>(denom);
            const double y =
                kHeight - kBottom - plot_h * (sr.ys[i] - r.lo) / (r.hi - r.lo);
            s << num(x) << ',' << num(y) << ' ';
        }
        s << "\"/>\n";
        s << "<text x=\"" << kWidth - kRight - 6 << "\" y=\"" << kTop + 16 * (k + 1)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
          << color << "\">" << escape(sr.name) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string bar_chart(const std::vector<std::pair<std::string, double>>& bars,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label) {
    if (bars.empty()) throw std::invalid_argument("no bars to plot");
    double hi = 0.0;
    for (const auto& [_, v] : bars) hi = std::max(hi, v);
    const Range r = pad_range(0.0, hi);

    std::ostringstream s;
    open_doc(s, title);
    axes(s, x_label, y_label);
    y_ticks(s, r);

    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    const double slot = plot_w / static_cast<double>(bars.size());
    const double bar_w = slot * 0.8;
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const double h = plot_h * (bars[i].second - r.lo) / (r.hi - r.lo);
        const double x = kLeft + slot * static_cast<double>(i) + (slot - bar_w) / 2.0;
        s << "<rect x=\"" << num(x) << "\" y=\"" << num(kHeight - kBottom - h) << "\" width=\""
          << num(bar_w) << "\" height=\"" << num(h) << "\" fill=\"#1f77b4\"/>\n";
        if (bars.size() <= 24 || i % std::max<std::size_t>(1, bars.size() / 12) == 0) {
            s << "<text x=\"" << num(x + bar_w / 2) << "\" y=\"" << kHeight - kBottom + 16
              << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
              << escape(bars[i].first) << "</text>\n";
        }
    }
    s << "</svg>\n";
    return s.str();
}

std::string heatmap(const std::vector<std::vector<double>>& cells,
                    const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::string& title) {
    if (cells.empty() || cells[0].empty()) throw std::invalid_argument("empty heatmap");
    const std::size_t rows = cells.size();
    const std::size_t cols = cells[0].size();
    double lo = cells[0][0], hi = cells[0][0];
    for (const auto& row : cells) {
        if (row.size() != cols) throw std::invalid_argument("ragged heatmap");
        for (double v : row) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const double span = hi > lo ? hi - lo : 1.0;

    std::ostringstream s;
    open_doc(s, title);
    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    const double cw = plot_w / static_cast<double>(cols);
    const double ch = plot_h / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double t = (cells[r][c] - lo) / span;
            // dark blue (low) to warm yellow (high)
            const int red = static_cast<int>(30 + 225 * t);
            const int green = static_cast<int>(40 + 180 * t);
            const int blue = static_cast<int>(120 - 80 * t);
            const double x = kLeft + cw * static_cast<double>(c);
            const double y = kTop + ch * static_cast<double>(r);
            s << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cw)
              << "\" height=\"" << num(ch) << "\" fill=\"rgb(" << red << ',' << green << ','
              << blue << ")\"/>\n";
            s << "<text x=\"" << num(x + cw / 2) << "\" y=\"" << num(y + ch / 2 + 4)
              << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\""
              << " fill=\"" << (t > 0.6 ? "black" : "white") << "\">" << num(cells[r][c])
              << "</text>\n";
        }
    }
    for (std::size_t r = 0; r < rows && r < row_labels.size(); ++r) {
        s << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(kTop + ch * (r + 0.5) + 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
          << escape(row_labels[r]) << "</text>\n";
    }
    for (std::size_t c = 0; c < cols && c < col_labels.size(); ++c) {
        s << "<text x=\"" << num(kLeft + cw * (c + 0.5)) << "\" y=\"" << kHeight - kBottom + 16
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
          << escape(col_labels[c]) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
    if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace fewshot::svg
