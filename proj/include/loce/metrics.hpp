#pragma once

// Distribution metrics over labeled concept-vector sets: purity, Dunn-style
// separation, overlap ratio, cumulative-distance outlier ranking, nearest
// neighbor retrieval, mAP@k, and normalized cross-correlation.

#include <map>
#include <optional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "loce/clustering.hpp"
#include "loce/tensor_store.hpp"

namespace loce {

struct LabeledVectors {
    MatrixF matrix;
    std::vector<std::string> labels;
    std::size_t excluded_failed = 0;
    std::vector<std::size_t> source_rows;  // bank row of each matrix row

    std::vector<std::size_t> rows_for(const std::string& label) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == label) out.push_back(i);
        }
        return out;
    }

    std::vector<std::string> distinct_labels() const {
        std::vector<std::string> out;
        std::set<std::string> seen;
        for (const auto& l : labels) {
            if (seen.insert(l).second) out.push_back(l);
        }
        return out;
    }

    MatrixF subset(const std::string& label) const {
        const auto rows = rows_for(label);
        return matrix.select_rows(rows);
    }
};

// Non-failed rows of a bank with their labels.
inline LabeledVectors labeled_vectors(const ConceptBank& bank) {
    LabeledVectors lv;
    lv.source_rows = bank.valid_rows();
    lv.matrix = bank.matrix.select_rows(lv.source_rows);
    for (auto r : lv.source_rows) lv.labels.push_back(bank.records[r].concept_label);
    lv.excluded_failed = bank.size() - lv.source_rows.size();
    return lv;
}

inline double cluster_purity(std::span<const std::size_t> cluster_rows, std::span<const std::string> labels) {
    if (cluster_rows.empty()) {
        throw ArgumentError("cluster_purity of an empty cluster");
    }
    std::map<std::string, std::size_t> counts;
    std::size_t best = 0;
    for (auto r : cluster_rows) best = std::max(best, ++counts[labels[r]]);
    return static_cast<double>(best) / static_cast<double>(cluster_rows.size());
}

inline double partition_purity(const ClusterPartition& partition, std::span<const std::string> labels) {
    if (partition.assignments.size() != labels.size()) {
        throw ArgumentError("partition_purity: partition does not cover all rows");
    }
    require(!labels.empty(), "partition_purity: no rows");
    std::vector<std::map<std::string, std::size_t>> counts(partition.n_clusters);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (partition.assignments[i] >= partition.n_clusters) {
            throw ArgumentError("partition_purity: cluster id out of range");
        }
        ++counts[partition.assignments[i]][labels[i]];
    }
    std::size_t total = 0;
    for (const auto& c : counts) {
        std::size_t best = 0;
        for (const auto& [label, n] : c) best = std::max(best, n);
        total += best;
    }
    return static_cast<double>(total) / static_cast<double>(labels.size());
}

// Minimum euclidean distance between any row of a and any row of b.
template <typename T>
double inter_distance(const Matrix<T>& a, const Matrix<T>& b) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            best = std::min(best, euclidean_distance(a.row(i), b.row(j)));
        }
    }
    return best;
}

template <typename T>
double mean_intra_distance(const Matrix<T>& c) {
    require(c.rows() >= 2, "mean intra distance needs at least 2 vectors");
    double sum = 0.0;
    for (std::size_t i = 0; i < c.rows(); ++i) {
        for (std::size_t j = i + 1; j < c.rows(); ++j) {
            sum += euclidean_distance(c.row(i), c.row(j));
        }
    }
    const double n = static_cast<double>(c.rows());
    return 2.0 * sum / (n * (n - 1.0));
}

template <typename T>
double max_intra_distance(const Matrix<T>& c) {
    double best = 0.0;
    for (std::size_t i = 0; i < c.rows(); ++i) {
        for (std::size_t j = i + 1; j < c.rows(); ++j) {
            best = std::max(best, euclidean_distance(c.row(i), c.row(j)));
        }
    }
    return best;
}

// Inter(C_i, rest) / MeanIntra(C_i).
template <typename T>
double separation_absolute(const Matrix<T>& concept_rows, const Matrix<T>& other_rows) {
    if (concept_rows.rows() < 2) {
        throw ArgumentError("separation_absolute: concept needs at least 2 vectors");
    }
    require(other_rows.rows() >= 1, "separation_absolute: no other concepts");
    const double intra = mean_intra_distance(concept_rows);
    if (intra == 0.0) {
        throw ArgumentError("separation_absolute: concept vectors are all identical");
    }
    return inter_distance(concept_rows, other_rows) / intra;
}

// Inter(C_i, C_j) / MaxIntra(C_i u C_j).
template <typename T>
double separation_pairwise(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.rows() >= 1 && b.rows() >= 1, "separation_pairwise: both concepts must be nonempty");
    require(a.rows() + b.rows() >= 2, "separation_pairwise: union needs at least 2 vectors");
    Matrix<T> both = a;
    for (std::size_t i = 0; i < b.rows(); ++i) both.append_row(b.row(i));
    const double spread = max_intra_distance(both);
    if (spread == 0.0) {
        throw ArgumentError("separation_pairwise: all vectors identical");
    }
    return inter_distance(a, b) / spread;
}

// Fraction of C_i rows strictly closer to some C_j row than to their nearest
// other C_i row. Asymmetric.
template <typename T>
double overlap_ratio(const Matrix<T>& ci, const Matrix<T>& cj) {
    if (ci.rows() < 2) {
        throw ArgumentError("overlap_ratio: source concept needs at least 2 vectors");
    }
    require(cj.rows() >= 1, "overlap_ratio: target concept is empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ci.rows(); ++i) {
        double own = std::numeric_limits<double>::infinity();
        for (std::size_t z = 0; z < ci.rows(); ++z) {
            if (z != i) own = std::min(own, euclidean_distance(ci.row(i), ci.row(z)));
        }
        double other = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cj.rows(); ++j) {
            other = std::min(other, euclidean_distance(ci.row(i), cj.row(j)));
        }
        hits += other < own ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(ci.rows());
}

struct OutlierScore {
    std::size_t row = 0;
    double cumulative_l2 = 0.0;
};

// Sum of distances to every other row, sorted descending; ties by lower row.
template <typename T>
std::vector<OutlierScore> rank_outliers(const Matrix<T>& rows) {
    if (rows.rows() < 2) {
        throw ArgumentError("rank_outliers needs at least 2 vectors");
    }
    std::vector<OutlierScore> scores(rows.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) scores[i].row = i;
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        for (std::size_t j = i + 1; j < rows.rows(); ++j) {
            const double d = euclidean_distance(rows.row(i), rows.row(j));
            scores[i].cumulative_l2 += d;
            scores[j].cumulative_l2 += d;
        }
    }
    std::stable_sort(scores.begin(), scores.end(),
                     [](const OutlierScore& a, const OutlierScore& b) { return a.cumulative_l2 > b.cumulative_l2; });
    return scores;
}

struct Neighbor {
    std::size_t row = 0;
    double distance = 0.0;
};

struct RetrievalResult {
    std::vector<Neighbor> neighbors;
    bool truncated = false;  // fewer than k candidates were available
};

// k nearest rows to `query` by euclidean distance, ascending, ties by lower
// row. `exclude` removes the query's own row from the candidates.
template <typename T, typename Q>
RetrievalResult retrieve_topk(std::span<const Q> query, const Matrix<T>& bank, std::size_t k,
                              std::optional<std::size_t> exclude = std::nullopt) {
    require(k >= 1, "retrieve_topk: k must be >= 1");
    require(query.size() == bank.cols(), "retrieve_topk: query length does not match bank");
    std::vector<Neighbor> all;
    for (std::size_t i = 0; i < bank.rows(); ++i) {
        if (exclude && *exclude == i) continue;
        all.push_back({i, euclidean_distance(query, bank.row(i))});
    }
    std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
    RetrievalResult r;
    r.truncated = k > all.size();
    all.resize(std::min(k, all.size()));
    r.neighbors = std::move(all);
    return r;
}

// Average precision of one ranked relevance list, normalized by
// min(k, relevant_total).
inline double average_precision_at_k(std::span<const std::uint8_t> relevance, std::size_t relevant_total, std::size_t k) {
    const std::size_t r_q = std::min(k, relevant_total);
    if (r_q == 0) return 0.0;
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < std::min(k, relevance.size()); ++i) {
        if (relevance[i]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(r_q);
}

struct MapResult {
    double value = 0.0;
    std::size_t queries = 0;
    std::vector<std::size_t> skipped;  // queries whose concept has no other member
};

// Every row queries all other rows.
inline MapResult map_at_k(const LabeledVectors& data, std::size_t k) {
    require(k >= 1, "map_at_k: k must be >= 1");
    std::map<std::string, std::size_t> label_counts;
    for (const auto& l : data.labels) ++label_counts[l];
    MapResult out;
    double total = 0.0;
    for (std::size_t q = 0; q < data.matrix.rows(); ++q) {
        const std::size_t relevant = label_counts[data.labels[q]] - 1;
        if (relevant == 0) {
            out.skipped.push_back(q);
            continue;
        }
        const auto hits = retrieve_topk(data.matrix.row(q), data.matrix, k, q);
        std::vector<std::uint8_t> rel;
        for (const auto& nb : hits.neighbors) rel.push_back(data.labels[nb.row] == data.labels[q]);
        total += average_precision_at_k(rel, relevant, k);
        ++out.queries;
    }
    out.value = out.queries ? total / static_cast<double>(out.queries) : 0.0;
    return out;
}

// Pearson-style correlation of two equally sized sets, flattened.
template <typename T>
double ncc(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw ArgumentError("ncc: inputs must have equal length >= 2");
    }
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i] - ma;
        const double y = b[i] - mb;
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) {
        throw ArgumentError("ncc: zero centered norm");
    }
    return dot / std::sqrt(na * nb);
}

template <typename T>
double ncc(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "ncc: matrices differ in shape");
    return ncc(std::span<const T>(a.data()), std::span<const T>(b.data()));
}

}  // namespace loce
