#pragma once

// Agglomerative clustering of concept-vector sets (nearest-neighbor chain with
// Lance-Williams updates), dendrogram cutting, purity-driven adaptive cluster
// selection, and centroid generalization.

#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "loce/common.hpp"

namespace loce {

enum class Linkage { ward, complete };
enum class Metric { euclidean, cosine };

inline Linkage parse_linkage(const std::string& s) {
    if (s == "ward") return Linkage::ward;
    if (s == "complete") return Linkage::complete;
    throw ArgumentError("unknown linkage method: " + s);
}

inline Metric parse_metric(const std::string& s) {
    if (s == "euclidean") return Metric::euclidean;
    if (s == "cosine") return Metric::cosine;
    throw ArgumentError("unknown metric: " + s);
}

inline const char* to_string(Linkage l) { return l == Linkage::ward ? "ward" : "complete"; }
inline const char* to_string(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }

// One agglomeration step. Node ids follow the usual convention: leaves are
// 0..n-1 and the node created by row i is n+i.
struct Merge {
    std::size_t left = 0;
    std::size_t right = 0;
    double height = 0.0;
    std::size_t size = 0;
};

struct LinkageTable {
    std::vector<Merge> rows;
    std::size_t n_leaves = 0;

    std::size_t root() const { return 2 * n_leaves - 2; }
    bool is_leaf(std::size_t node) const { return node < n_leaves; }
    const Merge& merge_of(std::size_t node) const { return rows[node - n_leaves]; }
    std::size_t node_size(std::size_t node) const { return is_leaf(node) ? 1 : merge_of(node).size; }
};

struct ClusterPartition {
    std::vector<std::size_t> assignments;  // leaf index -> cluster id
    std::size_t n_clusters = 0;

    std::vector<std::vector<std::size_t>> members() const {
        std::vector<std::vector<std::size_t>> out(n_clusters);
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            out[assignments[i]].push_back(i);
        }
        return out;
    }
};

template <typename T>
double cosine_distance(std::span<const T> a, std::span<const T> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        return 2.0;
    }
    return std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 2.0);
}

namespace detail {

// Packed upper triangle of a symmetric n x n matrix without the diagonal.
class CondensedMatrix {
public:
    explicit CondensedMatrix(std::size_t n) : n_(n), data_(n * (n - 1) / 2) {}

    double& operator()(std::size_t i, std::size_t j) { return data_[index(i, j)]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[index(i, j)]; }

private:
    std::size_t index(std::size_t i, std::size_t j) const {
        if (i > j) std::swap(i, j);
        return n_ * i - i * (i + 1) / 2 + (j - i - 1);
    }

    std::size_t n_;
    std::vector<double> data_;
};

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    std::size_t unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[b] = a;
        return a;
    }

private:
    std::vector<std::size_t> parent_;
};

// Sorts raw merges (given as representative leaves) by height and assigns
// node ids.
inline LinkageTable label_merges(std::vector<Merge> raw, std::size_t n) {
    std::stable_sort(raw.begin(), raw.end(), [](const Merge& a, const Merge& b) { return a.height < b.height; });
    UnionFind uf(n);
    std::vector<std::size_t> node_of(n);
    std::iota(node_of.begin(), node_of.end(), std::size_t{0});
    std::vector<std::size_t> size_of(n, 1);
    LinkageTable table;
    table.n_leaves = n;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const std::size_t ra = uf.find(raw[i].left);
        const std::size_t rb = uf.find(raw[i].right);
        std::size_t a = node_of[ra];
        std::size_t b = node_of[rb];
        const std::size_t size = size_of[ra] + size_of[rb];
        const std::size_t root = uf.unite(ra, rb);
        node_of[root] = n + i;
        size_of[root] = size;
        table.rows.push_back({std::min(a, b), std::max(a, b), raw[i].height, size});
    }
    return table;
}

}  // namespace detail

template <typename T>
LinkageTable linkage(const Matrix<T>& vectors, Linkage method, Metric metric) {
    const std::size_t n = vectors.rows();
    if (n < 2) {
        throw ArgumentError("linkage needs at least 2 vectors");
    }
    if (method == Linkage::ward && metric != Metric::euclidean) {
        throw ArgumentError("ward linkage requires the euclidean metric");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!all_finite(vectors.row(i))) {
            throw ArgumentError("linkage: row " + std::to_string(i) + " is not finite (filter failed rows first)");
        }
    }

    detail::CondensedMatrix dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            dist(i, j) = metric == Metric::euclidean ? euclidean_distance(vectors.row(i), vectors.row(j))
                                                     : cosine_distance(vectors.row(i), vectors.row(j));
        }
    }

    std::vector<std::size_t> size(n, 1);
    std::vector<bool> active(n, true);
    std::vector<std::size_t> chain;
    std::vector<Merge> raw;
    raw.reserve(n - 1);

    for (std::size_t step = 0; step + 1 < n; ++step) {
        if (chain.empty()) {
            for (std::size_t i = 0; i < n; ++i) {
                if (active[i]) {
                    chain.push_back(i);
                    break;
                }
            }
        }
        std::size_t a = 0, b = 0;
        while (true) {
            a = chain.back();
            const bool has_prev = chain.size() >= 2;
            const std::size_t prev = has_prev ? chain[chain.size() - 2] : a;
            double best = std::numeric_limits<double>::infinity();
            b = a;
            if (has_prev) {
                best = dist(a, prev);
                b = prev;
            }
            for (std::size_t x = 0; x < n; ++x) {
                if (!active[x] || x == a) continue;
                if (dist(a, x) < best) {
                    best = dist(a, x);
                    b = x;
                }
            }
            if (has_prev && b == prev) {
                break;
            }
            chain.push_back(b);
        }
        chain.pop_back();
        chain.pop_back();

        const double d_ab = dist(a, b);
        const double sa = static_cast<double>(size[a]);
        const double sb = static_cast<double>(size[b]);
        raw.push_back({a, b, d_ab, size[a] + size[b]});

        // The merged cluster lives in slot b; slot a is retired.
        for (std::size_t x = 0; x < n; ++x) {
            if (!active[x] || x == a || x == b) continue;
            const double d_ax = dist(a, x);
            const double d_bx = dist(b, x);
            if (method == Linkage::complete) {
                dist(b, x) = std::max(d_ax, d_bx);
            } else {
                const double sx = static_cast<double>(size[x]);
                const double v = ((sa + sx) * d_ax * d_ax + (sb + sx) * d_bx * d_bx - sx * d_ab * d_ab) /
                                 (sa + sb + sx);
                dist(b, x) = std::sqrt(std::max(v, 0.0));
            }
        }
        active[a] = false;
        size[b] += size[a];
    }
    return detail::label_merges(std::move(raw), n);
}

namespace detail {

// Representative leaf of every node, used to union subtrees.
inline std::vector<std::size_t> representative_leaves(const LinkageTable& t) {
    std::vector<std::size_t> rep(t.n_leaves + t.rows.size());
    std::iota(rep.begin(), rep.begin() + static_cast<std::ptrdiff_t>(t.n_leaves), std::size_t{0});
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        rep[t.n_leaves + i] = rep[t.rows[i].left];
    }
    return rep;
}

inline ClusterPartition partition_from_union_find(UnionFind& uf, std::size_t n) {
    ClusterPartition p;
    p.assignments.resize(n);
    std::map<std::size_t, std::size_t> ids;
    for (std::size_t i = 0; i < n; ++i) {
        auto [it, inserted] = ids.emplace(uf.find(i), ids.size());
        p.assignments[i] = it->second;
    }
    p.n_clusters = ids.size();
    return p;
}

}  // namespace detail

// Connected components after dropping every merge higher than t.
inline ClusterPartition cut_by_distance(const LinkageTable& table, double t) {
    require(t >= 0.0, "cut_by_distance: threshold must be >= 0");
    const auto rep = detail::representative_leaves(table);
    detail::UnionFind uf(table.n_leaves);
    for (const auto& m : table.rows) {
        if (m.height <= t) {
            uf.unite(rep[m.left], rep[m.right]);
        }
    }
    return detail::partition_from_union_find(uf, table.n_leaves);
}

// Applies the lowest n-k merges, giving exactly k clusters.
inline ClusterPartition cut_to_count(const LinkageTable& table, std::size_t k) {
    require(k >= 1 && k <= table.n_leaves, "cut_to_count: k must be in [1, n]");
    const auto rep = detail::representative_leaves(table);
    detail::UnionFind uf(table.n_leaves);
    for (std::size_t i = 0; i < table.n_leaves - k; ++i) {
        uf.unite(rep[table.rows[i].left], rep[table.rows[i].right]);
    }
    return detail::partition_from_union_find(uf, table.n_leaves);
}

// Leaves in left-to-right dendrogram order.
inline std::vector<std::size_t> leaf_order(const LinkageTable& table) {
    std::vector<std::size_t> order;
    if (table.n_leaves == 1) {
        return {0};
    }
    std::vector<std::size_t> stack{table.root()};
    while (!stack.empty()) {
        const std::size_t node = stack.back();
        stack.pop_back();
        if (table.is_leaf(node)) {
            order.push_back(node);
        } else {
            stack.push_back(table.merge_of(node).right);
            stack.push_back(table.merge_of(node).left);
        }
    }
    return order;
}

struct AdaptiveOptions {
    double cpt = 0.8;            // cluster purity threshold
    double cst_fraction = 0.05;  // cluster size threshold as a fraction of leaves
};

// Root-to-leaf selection: keep a node if its purity exceeds cpt, else if it is
// smaller than cst leaves, else descend into both children.
inline ClusterPartition adaptive_select(const LinkageTable& table, std::span<const std::string> labels,
                                        AdaptiveOptions opts = {}) {
    const std::size_t n = table.n_leaves;
    require(labels.size() == n, "adaptive_select: labels must cover all leaves");
    std::map<std::string, std::size_t> label_index;
    std::vector<std::size_t> leaf_label(n);
    for (std::size_t i = 0; i < n; ++i) {
        leaf_label[i] = label_index.emplace(labels[i], label_index.size()).first->second;
    }
    const std::size_t n_labels = label_index.size();

    // Bottom-up label histograms of internal nodes.
    std::vector<std::vector<std::size_t>> hist(table.rows.size(), std::vector<std::size_t>(n_labels, 0));
    auto add_node = [&](std::vector<std::size_t>& h, std::size_t node) {
        if (table.is_leaf(node)) {
            ++h[leaf_label[node]];
        } else {
            const auto& child = hist[node - n];
            for (std::size_t l = 0; l < n_labels; ++l) h[l] += child[l];
        }
    };
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        add_node(hist[i], table.rows[i].left);
        add_node(hist[i], table.rows[i].right);
    }
    auto purity = [&](std::size_t node) {
        if (table.is_leaf(node)) return 1.0;
        const auto& h = hist[node - n];
        return static_cast<double>(*std::max_element(h.begin(), h.end())) /
               static_cast<double>(table.merge_of(node).size);
    };

    const double cst = opts.cst_fraction * static_cast<double>(n);
    ClusterPartition p;
    p.assignments.assign(n, 0);
    std::vector<std::size_t> stack{n == 1 ? 0 : table.root()};
    while (!stack.empty()) {
        const std::size_t node = stack.back();
        stack.pop_back();
        const bool select = purity(node) > opts.cpt || static_cast<double>(table.node_size(node)) < cst ||
                            table.is_leaf(node);
        if (select) {
            std::vector<std::size_t> inner{node};
            while (!inner.empty()) {
                const std::size_t x = inner.back();
                inner.pop_back();
                if (table.is_leaf(x)) {
                    p.assignments[x] = p.n_clusters;
                } else {
                    inner.push_back(table.merge_of(x).left);
                    inner.push_back(table.merge_of(x).right);
                }
            }
            ++p.n_clusters;
        } else {
            stack.push_back(table.merge_of(node).right);
            stack.push_back(table.merge_of(node).left);
        }
    }
    return p;
}

enum class CentroidKind { sgloce, gloce };

struct Centroid {
    std::vector<double> vector;
    std::size_t member_count = 0;
    CentroidKind kind = CentroidKind::sgloce;
};

template <typename T>
Centroid centroid(const Matrix<T>& vectors, std::span<const std::size_t> rows,
                  CentroidKind kind = CentroidKind::sgloce) {
    if (rows.empty()) {
        throw ArgumentError("centroid of an empty subset");
    }
    Centroid c{std::vector<double>(vectors.cols(), 0.0), rows.size(), kind};
    for (auto r : rows) {
        auto row = vectors.row(r);
        if (!all_finite(row)) {
            throw ArgumentError("centroid: row " + std::to_string(r) + " is not finite");
        }
        for (std::size_t k = 0; k < row.size(); ++k) c.vector[k] += row[k];
    }
    for (auto& x : c.vector) x /= static_cast<double>(rows.size());
    return c;
}

template <typename T>
Centroid centroid(const Matrix<T>& vectors, CentroidKind kind = CentroidKind::gloce) {
    std::vector<std::size_t> all(vectors.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return centroid(vectors, std::span<const std::size_t>(all), kind);
}

// Adjusted Rand index between two flat labelings of the same items.
inline double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    require(a.size() == b.size(), "adjusted_rand_index: labelings differ in length");
    std::map<std::pair<std::size_t, std::size_t>, double> joint;
    std::map<std::size_t, double> ca, cb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1;
        ca[a[i]] += 1;
        cb[b[i]] += 1;
    }
    auto c2 = [](double x) { return x * (x - 1) / 2; };
    double sum_joint = 0, sum_a = 0, sum_b = 0;
    for (auto& [k, v] : joint) sum_joint += c2(v);
    for (auto& [k, v] : ca) sum_a += c2(v);
    for (auto& [k, v] : cb) sum_b += c2(v);
    const double total = c2(static_cast<double>(a.size()));
    const double expected = total > 0 ? sum_a * sum_b / total : 0.0;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) {
        return 1.0;
    }
    return (sum_joint - expected) / (max_index - expected);
}

}  // namespace loce
