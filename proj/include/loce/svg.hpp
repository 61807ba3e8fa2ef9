#pragma once

// Deterministic SVG figures: dendrograms, 2D scatter plots with GMM 1-sigma
// ellipses, heatmaps and mAP@k curves. Coordinates are printed with a fixed
// number of decimals so identical inputs give identical bytes.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "loce/clustering.hpp"
#include "loce/density.hpp"

namespace loce::svg {

inline std::string num(double v) {
    if (!std::isfinite(v)) return "0";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    std::string s(buf);
    if (s == "-0.00") s = "0.00";
    return s;
}

inline std::string escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Categorical palette (Tableau 10), cycled.
inline std::string color(std::size_t i) {
    static const char* palette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
    return palette[i % 10];
}

class Document {
public:
    Document(double width, double height) : width_(width), height_(height) {}

    void add(const std::string& element) { body_ += "  " + element + "\n"; }

    void text(double x, double y, const std::string& s, const std::string& anchor = "start", int size = 11) {
        add("<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
            "\" text-anchor=\"" + anchor + "\">" + escape(s) + "</text>");
    }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0,
              const std::string& cls = "") {
        add("<line" + class_attr(cls) + " x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) +
            "\" y2=\"" + num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"/>");
    }

    std::string str() const {
        return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
               num(width_) + "\" height=\"" + num(height_) + "\" viewBox=\"0 0 " + num(width_) + " " + num(height_) +
               "\">\n  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + body_ + "</svg>\n";
    }

    static std::string class_attr(const std::string& cls) { return cls.empty() ? "" : " class=\"" + cls + "\""; }

private:
    double width_;
    double height_;
    std::string body_;
};

// Dendrogram with leaves along the x axis. Links whose leaves all fall in one
// cluster take that cluster's colour; each cluster gets a bracket under its
// leaves.
inline std::string dendrogram(const LinkageTable& table, const ClusterPartition& partition,
                              const std::vector<std::string>& leaf_labels, const std::string& title = "") {
    const std::size_t n = table.n_leaves;
    require(partition.assignments.size() == n && leaf_labels.size() == n, "dendrogram: sizes do not match");
    const double margin = 50.0, label_band = 90.0, plot_h = 300.0;
    const double step = n > 1 ? std::max(8.0, std::min(24.0, 800.0 / static_cast<double>(n))) : 24.0;
    const double width = 2 * margin + step * static_cast<double>(std::max<std::size_t>(n, 1));
    const double height = margin + plot_h + label_band + 30.0;
    Document doc(width, height);
    if (!title.empty()) doc.text(width / 2, 25, title, "middle", 14);

    const auto order = leaf_order(table);
    std::vector<double> x(n + table.rows.size(), 0.0), y(n + table.rows.size(), 0.0);
    std::vector<long> node_cluster(n + table.rows.size(), -1);
    const double base = margin + plot_h;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        x[order[pos]] = margin + step * (static_cast<double>(pos) + 0.5);
        y[order[pos]] = base;
        node_cluster[order[pos]] = static_cast<long>(partition.assignments[order[pos]]);
    }
    double top = 0.0;
    for (const auto& m : table.rows) top = std::max(top, m.height);
    const double scale = top > 0.0 ? plot_h / top : 0.0;

    doc.line(margin - 10, margin, margin - 10, base, "#333");
    doc.text(margin - 14, margin + 4, num(top), "end", 9);
    doc.text(margin - 14, base + 4, "0", "end", 9);

    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& m = table.rows[i];
        const std::size_t node = n + i;
        x[node] = (x[m.left] + x[m.right]) / 2;
        y[node] = base - m.height * scale;
        node_cluster[node] = node_cluster[m.left] == node_cluster[m.right] ? node_cluster[m.left] : -1;
        const std::string stroke = node_cluster[node] >= 0 ? color(static_cast<std::size_t>(node_cluster[node])) : "#888";
        doc.add("<path class=\"link\" d=\"M" + num(x[m.left]) + "," + num(y[m.left]) + " V" + num(y[node]) + " H" +
                num(x[m.right]) + " V" + num(y[m.right]) + "\" fill=\"none\" stroke=\"" + stroke +
                "\" stroke-width=\"1.5\"/>");
    }

    // Leaf labels, rotated.
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const double lx = x[order[pos]];
        const double ly = base + 8;
        doc.add("<text x=\"" + num(lx) + "\" y=\"" + num(ly) + "\" font-size=\"9\" transform=\"rotate(90 " + num(lx) +
                " " + num(ly) + ")\">" + escape(leaf_labels[order[pos]]) + "</text>");
    }

    // Brackets: clusters cut from the tree are contiguous in leaf order.
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> span;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const auto c = partition.assignments[order[pos]];
        auto it = span.find(c);
        if (it == span.end()) {
            span[c] = {pos, pos};
        } else {
            it->second.second = pos;
        }
    }
    const double by = base + label_band;
    for (const auto& [c, range] : span) {
        const double x0 = margin + step * static_cast<double>(range.first) + 2;
        const double x1 = margin + step * static_cast<double>(range.second + 1) - 2;
        doc.add("<path class=\"cluster-bracket\" data-cluster=\"" + std::to_string(c) + "\" d=\"M" + num(x0) + "," +
                num(by - 6) + " V" + num(by) + " H" + num(x1) + " V" + num(by - 6) + "\" fill=\"none\" stroke=\"" +
                color(c) + "\" stroke-width=\"3\"/>");
        doc.text((x0 + x1) / 2, by + 14, "C" + std::to_string(c), "middle", 10);
    }
    return doc.str();
}

struct Frame {
    double x0, x1, y0, y1;  // data bounds
    double left, top, size;  // pixel placement of a square plot area

    double px(double v) const { return left + (v - x0) / (x1 - x0) * size; }
    double py(double v) const { return top + size - (v - y0) / (y1 - y0) * size; }
};

inline Frame fit_frame(const MatrixD& pts, double left, double top, double size) {
    Frame f{0, 1, 0, 1, left, top, size};
    if (pts.rows() > 0) {
        f.x0 = f.x1 = pts(0, 0);
        f.y0 = f.y1 = pts(0, 1);
        for (std::size_t i = 0; i < pts.rows(); ++i) {
            f.x0 = std::min(f.x0, pts(i, 0));
            f.x1 = std::max(f.x1, pts(i, 0));
            f.y0 = std::min(f.y0, pts(i, 1));
            f.y1 = std::max(f.y1, pts(i, 1));
        }
    }
    const double pad_x = std::max(1e-9, (f.x1 - f.x0) * 0.1);
    const double pad_y = std::max(1e-9, (f.y1 - f.y0) * 0.1);
    f.x0 -= pad_x;
    f.x1 += pad_x;
    f.y0 -= pad_y;
    f.y1 += pad_y;
    return f;
}

// One-sigma ellipse of a 2x2 covariance: semi-axes are the square roots of
// the eigenvalues, rotated to the leading eigenvector.
struct EllipseShape {
    double rx, ry, angle_deg;
};

inline EllipseShape one_sigma(const Cov2& c) {
    const double tr = c.xx + c.yy;
    const double disc = std::sqrt(std::max(0.0, (c.xx - c.yy) * (c.xx - c.yy) / 4 + c.xy * c.xy));
    const double l1 = tr / 2 + disc;
    const double l2 = std::max(0.0, tr / 2 - disc);
    const double angle = std::atan2(l1 - c.xx, c.xy == 0.0 ? 1.0 : c.xy);
    const double theta = c.xy == 0.0 ? (c.xx >= c.yy ? 0.0 : std::numbers::pi / 2) : angle;
    return {std::sqrt(l1), std::sqrt(l2), theta * 180.0 / std::numbers::pi};
}

// Scatter of 2D points coloured by label, with each model's components drawn
// as 1-sigma ellipses.
inline std::string scatter(const MatrixD& pts, const std::vector<std::string>& labels,
                           const std::vector<GmmModel>& models, const std::string& title = "") {
    require(labels.size() == pts.rows(), "scatter: labels do not match points");
    const double size = 480, left = 60, top = 50;
    Document doc(left + size + 180, top + size + 50);
    if (!title.empty()) doc.text((left + size) / 2, 25, title, "middle", 14);
    const Frame f = fit_frame(pts, left, top, size);
    doc.add("<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(size) + "\" height=\"" + num(size) +
            "\" fill=\"none\" stroke=\"#333\"/>");
    std::vector<std::string> legend;
    std::map<std::string, std::size_t> index;
    for (const auto& l : labels) {
        if (index.emplace(l, legend.size()).second) legend.push_back(l);
    }
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        doc.add("<circle class=\"point\" cx=\"" + num(f.px(pts(i, 0))) + "\" cy=\"" + num(f.py(pts(i, 1))) +
                "\" r=\"3\" fill=\"" + color(index[labels[i]]) + "\" fill-opacity=\"0.8\"/>");
    }
    const double sx = size / (f.x1 - f.x0);
    const double sy = size / (f.y1 - f.y0);
    for (std::size_t m = 0; m < models.size(); ++m) {
        for (std::size_t k = 0; k < models[m].components(); ++k) {
            // Scale the covariance into pixel space first so the ellipse stays
            // correct under unequal axis scaling (y is flipped).
            const auto& c = models[m].covariances[k];
            const Cov2 pc{c.xx * sx * sx, -c.xy * sx * sy, c.yy * sy * sy};
            const auto e = one_sigma(pc);
            const double cx = f.px(models[m].means[k][0]);
            const double cy = f.py(models[m].means[k][1]);
            doc.add("<ellipse class=\"gmm-ellipse\" data-model=\"" + std::to_string(m) + "\" data-component=\"" +
                    std::to_string(k) + "\" cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" rx=\"" + num(e.rx) +
                    "\" ry=\"" + num(e.ry) + "\" transform=\"rotate(" + num(e.angle_deg) + " " + num(cx) + " " +
                    num(cy) + ")\" fill=\"none\" stroke=\"" + (models.size() > 1 ? color(m) : std::string("#222")) +
                    "\" stroke-width=\"1.5\"/>");
        }
    }
    for (std::size_t i = 0; i < legend.size(); ++i) {
        const double ly = top + 10 + 16 * static_cast<double>(i);
        doc.add("<circle cx=\"" + num(left + size + 20) + "\" cy=\"" + num(ly) + "\" r=\"4\" fill=\"" + color(i) + "\"/>");
        doc.text(left + size + 30, ly + 4, legend[i]);
    }
    return doc.str();
}

// Square heatmap of a label x label matrix, values printed in the cells.
inline std::string heatmap(const std::vector<std::vector<double>>& values, const std::vector<std::string>& labels,
                           const std::string& title = "") {
    const std::size_t n = labels.size();
    require(values.size() == n, "heatmap: matrix does not match labels");
    const double cell = 48, left = 110, top = 60;
    Document doc(left + cell * static_cast<double>(n) + 20, top + cell * static_cast<double>(n) + 20);
    if (!title.empty()) doc.text(left + cell * static_cast<double>(n) / 2, 25, title, "middle", 14);
    double hi = 0.0;
    for (const auto& row : values) {
        for (double v : row) {
            if (std::isfinite(v)) hi = std::max(hi, std::abs(v));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        doc.text(left - 6, top + cell * (static_cast<double>(i) + 0.5) + 4, labels[i], "end", 10);
        const double lx = left + cell * (static_cast<double>(i) + 0.5);
        doc.add("<text x=\"" + num(lx) + "\" y=\"" + num(top - 6) + "\" font-size=\"10\" transform=\"rotate(-45 " +
                num(lx) + " " + num(top - 6) + ")\">" + escape(labels[i]) + "</text>");
        require(values[i].size() == n, "heatmap: matrix is not square");
        for (std::size_t j = 0; j < n; ++j) {
            const double v = values[i][j];
            const double t = std::isfinite(v) && hi > 0.0 ? std::abs(v) / hi : 0.0;
            const int shade = static_cast<int>(std::lround(255 - 180 * t));
            char fill[16];
            std::snprintf(fill, sizeof(fill), "#%02x%02xff", shade, shade);
            const double x = left + cell * static_cast<double>(j);
            const double y = top + cell * static_cast<double>(i);
            doc.add("<rect class=\"cell\" x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(cell) +
                    "\" height=\"" + num(cell) + "\" fill=\"" + (std::isfinite(v) ? std::string(fill) : "#dddddd") +
                    "\" stroke=\"white\"/>");
            char txt[32];
            std::snprintf(txt, sizeof(txt), "%.2f", v);
            doc.text(x + cell / 2, y + cell / 2 + 4, std::isfinite(v) ? txt : "-", "middle", 10);
        }
    }
    return doc.str();
}

struct Curve {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

// Line chart with y in [0, 1], used for mAP@k curves.
inline std::string line_chart(const std::vector<Curve>& curves, const std::string& x_label, const std::string& y_label,
                              const std::string& title = "") {
    const double left = 60, top = 50, w = 480, h = 300;
    Document doc(left + w + 160, top + h + 60);
    if (!title.empty()) doc.text(left + w / 2, 25, title, "middle", 14);
    double xmin = 0, xmax = 1;
    bool first = true;
    for (const auto& c : curves) {
        for (const auto& [x, y] : c.points) {
            xmin = first ? x : std::min(xmin, x);
            xmax = first ? x : std::max(xmax, x);
            first = false;
        }
    }
    if (xmax <= xmin) xmax = xmin + 1;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * w; };
    auto py = [&](double y) { return top + h - y * h; };
    doc.add("<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
            "\" fill=\"none\" stroke=\"#333\"/>");
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        doc.text(left - 6, py(v) + 4, num(v), "end", 9);
    }
    doc.text(left + w / 2, top + h + 35, x_label, "middle");
    doc.add("<text x=\"20\" y=\"" + num(top + h / 2) + "\" font-size=\"11\" transform=\"rotate(-90 20 " +
            num(top + h / 2) + ")\" text-anchor=\"middle\">" + escape(y_label) + "</text>");
    for (std::size_t i = 0; i < curves.size(); ++i) {
        std::string pts;
        for (const auto& [x, y] : curves[i].points) {
            if (!pts.empty()) pts += " ";
            pts += num(px(x)) + "," + num(py(y));
            if (i == 0) doc.text(px(x), top + h + 15, num(x).substr(0, num(x).find('.')), "middle", 9);
        }
        doc.add("<polyline class=\"curve\" points=\"" + pts + "\" fill=\"none\" stroke=\"" + color(i) +
                "\" stroke-width=\"2\"/>");
        doc.add("<rect x=\"" + num(left + w + 15) + "\" y=\"" + num(top + 16 * static_cast<double>(i)) +
                "\" width=\"10\" height=\"10\" fill=\"" + color(i) + "\"/>");
        doc.text(left + w + 30, top + 16 * static_cast<double>(i) + 9, curves[i].name);
    }
    return doc.str();
}

}  // namespace loce::svg
