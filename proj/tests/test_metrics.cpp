#include <gtest/gtest.h>

#include <random>

#include "loce/metrics.hpp"
#include "oracles.hpp"

using namespace loce;

namespace {

MatrixD line(std::vector<double> xs) {
    const auto n = xs.size();
    return MatrixD(n, 1, std::move(xs));
}

MatrixD random_points(std::size_t n, std::size_t d, std::mt19937_64& rng, double shift = 0.0) {
    std::normal_distribution<double> g(shift, 1.0);
    MatrixD m(n, d);
    for (auto& x : m.data()) x = g(rng);
    return m;
}

oracle::Points pts(const MatrixD& m) {
    oracle::Points p;
    for (std::size_t i = 0; i < m.rows(); ++i) p.emplace_back(m.row(i).begin(), m.row(i).end());
    return p;
}

LabeledVectors labeled(const MatrixD& m, const std::vector<std::string>& labels) {
    LabeledVectors lv;
    lv.matrix = m.cast<float>();
    lv.labels = labels;
    return lv;
}

std::vector<std::string> random_labels(std::size_t n, std::mt19937_64& rng, int kinds = 3) {
    std::vector<std::string> l;
    for (std::size_t i = 0; i < n; ++i) l.push_back(std::string(1, static_cast<char>('a' + rng() % kinds)));
    return l;
}

}  // namespace

TEST(Purity, HandExamples) {
    const std::vector<std::string> aab{"A", "A", "B"};
    const std::vector<std::size_t> all{0, 1, 2}, single{2};
    EXPECT_NEAR(cluster_purity(all, aab), 2.0 / 3.0, 1e-15);
    EXPECT_EQ(cluster_purity(single, aab), 1.0);
    EXPECT_THROW(cluster_purity(std::vector<std::size_t>{}, aab), ArgumentError);

    const std::vector<std::string> labels{"A", "A", "B", "B", "B"};
    ClusterPartition p{{0, 0, 0, 1, 1}, 2};
    EXPECT_DOUBLE_EQ(partition_purity(p, labels), 0.8);
    ClusterPartition singletons{{0, 1, 2, 3, 4}, 5};
    EXPECT_DOUBLE_EQ(partition_purity(singletons, labels), 1.0);
    EXPECT_THROW(partition_purity(ClusterPartition{{0, 0}, 1}, labels), ArgumentError);
}

TEST(Purity, MatchesOracleAndBounds) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng() % 50;
        const std::size_t k = 1 + rng() % n;
        auto labels = random_labels(n, rng);
        ClusterPartition p;
        p.n_clusters = k;
        for (std::size_t i = 0; i < n; ++i) p.assignments.push_back(i < k ? i : rng() % k);
        const double got = partition_purity(p, labels);
        ASSERT_NEAR(got, oracle::purity(p.members(), labels), 1e-9);
        std::map<std::string, int> counts;
        int top = 0;
        for (auto& l : labels) top = std::max(top, ++counts[l]);
        ASSERT_GE(got, static_cast<double>(top) / n - 1e-12);
        ASSERT_LE(got, 1.0);
    }
}

TEST(Separation, HandExamples) {
    EXPECT_DOUBLE_EQ(separation_absolute(line({0, 1}), line({5, 6})), 4.0);
    EXPECT_DOUBLE_EQ(separation_absolute(line({0, 1}), line({5, 1})), 0.0);
    EXPECT_NEAR(separation_pairwise(line({0, 1}), line({5, 6})), 4.0 / 6.0, 1e-15);
    EXPECT_EQ(separation_pairwise(line({0, 1}), line({0, 1})), 0.0);
    EXPECT_THROW(separation_absolute(line({0}), line({5})), ArgumentError);
    EXPECT_THROW(separation_absolute(line({2, 2}), line({5})), ArgumentError);
    EXPECT_THROW(separation_pairwise(line({2}), line({2})), ArgumentError);
}

TEST(Separation, MatchesOracle) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 200; ++t) {
        const std::size_t d = 1 + rng() % 6;
        const auto a = random_points(2 + rng() % 20, d, rng);
        const auto b = random_points(1 + rng() % 20, d, rng, static_cast<double>(rng() % 4));
        ASSERT_NEAR(separation_absolute(a, b), oracle::separation_absolute(pts(a), pts(b)), 1e-9);
        const double sp = separation_pairwise(a, b);
        ASSERT_NEAR(sp, oracle::separation_pairwise(pts(a), pts(b)), 1e-9);
        ASSERT_GE(sp, 0.0);
        ASSERT_LE(sp, 1.0);
    }
}

TEST(Overlap, HandExamplesAndOracle) {
    EXPECT_NEAR(overlap_ratio(line({0, 1, 10}), line({9})), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(overlap_ratio(line({0, 1}), line({100, 101})), 0.0);
    EXPECT_EQ(overlap_ratio(line({0, 10, 20, 30}), line({1, 11, 21, 31})), 1.0);
    EXPECT_THROW(overlap_ratio(line({0}), line({1})), ArgumentError);

    std::mt19937_64 rng(3);
    for (int t = 0; t < 200; ++t) {
        const std::size_t d = 1 + rng() % 5;
        const auto a = random_points(2 + rng() % 25, d, rng);
        const auto b = random_points(1 + rng() % 25, d, rng, 0.5);
        const double got = overlap_ratio(a, b);
        ASSERT_NEAR(got, oracle::overlap(pts(a), pts(b)), 1e-9);
        ASSERT_GE(got, 0.0);
        ASSERT_LE(got, 1.0);
    }
}

TEST(Outliers, HandExampleAndOracle) {
    const auto r = rank_outliers(line({0, 1, 10}));
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r[0].row, 2u);
    EXPECT_DOUBLE_EQ(r[0].cumulative_l2, 19.0);
    EXPECT_EQ(r[1].row, 0u);
    EXPECT_DOUBLE_EQ(r[1].cumulative_l2, 11.0);
    EXPECT_EQ(r[2].row, 1u);
    EXPECT_DOUBLE_EQ(r[2].cumulative_l2, 10.0);

    for (const auto& s : rank_outliers(line({3, 3, 3}))) EXPECT_EQ(s.cumulative_l2, 0.0);
    EXPECT_EQ(rank_outliers(line({3, 3, 3}))[0].row, 0u);
    EXPECT_THROW(rank_outliers(line({1})), ArgumentError);

    std::mt19937_64 rng(4);
    for (int t = 0; t < 200; ++t) {
        auto m = random_points(2 + rng() % 30, 1 + rng() % 4, rng);
        const auto got = rank_outliers(m);
        const auto want = oracle::outliers(pts(m));
        for (std::size_t i = 0; i < got.size(); ++i) {
            ASSERT_EQ(got[i].row, want[i].first);
            ASSERT_NEAR(got[i].cumulative_l2, want[i].second, 1e-9);
        }
        // A far point dominates; translation keeps the order.
        std::vector<double> far(m.cols(), 1e4);
        auto with_far = m;
        with_far.append_row(far);
        ASSERT_EQ(rank_outliers(with_far)[0].row, m.rows());
        for (auto& x : m.data()) x += 7.5;
        const auto moved = rank_outliers(m);
        std::vector<double> before(m.rows()), after(m.rows());
        for (std::size_t i = 0; i < got.size(); ++i) {
            before[got[i].row] = got[i].cumulative_l2;
            after[moved[i].row] = moved[i].cumulative_l2;
        }
        for (std::size_t i = 0; i < before.size(); ++i) ASSERT_NEAR(after[i], before[i], 1e-9);
    }
}

TEST(Retrieve, Examples) {
    const auto bank = line({0, 1, 10});
    const auto r = retrieve_topk(std::span<const double>(std::vector<double>{0.4}), bank, 2);
    ASSERT_EQ(r.neighbors.size(), 2u);
    EXPECT_EQ(r.neighbors[0].row, 0u);
    EXPECT_EQ(r.neighbors[1].row, 1u);
    EXPECT_NEAR(r.neighbors[0].distance, 0.4, 1e-15);
    EXPECT_FALSE(r.truncated);

    const auto dup = line({5, 2, 5});
    const auto d = retrieve_topk(dup.row(0), dup, 1, std::size_t{0});
    EXPECT_EQ(d.neighbors[0].row, 2u);
    EXPECT_EQ(d.neighbors[0].distance, 0.0);

    const auto all = retrieve_topk(bank.row(0), bank, 5, std::size_t{0});
    EXPECT_TRUE(all.truncated);
    ASSERT_EQ(all.neighbors.size(), 2u);
    EXPECT_EQ(all.neighbors[1].row, 2u);
    EXPECT_THROW(retrieve_topk(bank.row(0), bank, 0), ArgumentError);
}

TEST(MapAtK, HandExamples) {
    const std::vector<std::uint8_t> rel{1, 0, 1};
    EXPECT_NEAR(average_precision_at_k(rel, 2, 3), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
    EXPECT_EQ(average_precision_at_k(rel, 0, 3), 0.0);

    MatrixD blobs(10, 2);
    std::vector<std::string> labels;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 0.1);
    for (std::size_t i = 0; i < 10; ++i) {
        blobs(i, 0) = (i < 5 ? 0.0 : 100.0) + u(rng);
        blobs(i, 1) = u(rng);
        labels.push_back(i < 5 ? "x" : "y");
    }
    const auto r = map_at_k(labeled(blobs, labels), 4);
    EXPECT_DOUBLE_EQ(r.value, 1.0);
    EXPECT_EQ(r.queries, 10u);
    EXPECT_DOUBLE_EQ(map_at_k(labeled(blobs, labels), 2).value, 1.0);
}

TEST(MapAtK, SkipsQueriesWithoutRelevantItems) {
    const auto r = map_at_k(labeled(line({0, 1, 5}), {"a", "a", "b"}), 2);
    EXPECT_EQ(r.queries, 2u);
    EXPECT_EQ(r.skipped, std::vector<std::size_t>{2});
    EXPECT_DOUBLE_EQ(r.value, 1.0);
}

TEST(MapAtK, MatchesOracleAndIsPermutationInvariant) {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 2 + rng() % 40;
        // float storage inside LabeledVectors; feed the oracle the same values.
        const auto m = random_points(n, 1 + rng() % 5, rng).cast<float>().cast<double>();
        const auto labels = random_labels(n, rng);
        const std::size_t k = 1 + rng() % 10;
        const double got = map_at_k(labeled(m, labels), k).value;
        ASSERT_NEAR(got, oracle::map_at_k(pts(m), labels, k), 1e-9);

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::string> plabels;
        for (auto i : perm) plabels.push_back(labels[i]);
        ASSERT_NEAR(map_at_k(labeled(m.select_rows(perm), plabels), k).value, got, 1e-9);
    }
}

TEST(Ncc, ExamplesAndOracle) {
    const std::vector<double> v{1, 2, 3};
    EXPECT_NEAR(ncc(std::span<const double>(v), std::span<const double>(v)), 1.0, 1e-15);
    EXPECT_NEAR(ncc(std::span<const double>(v), std::span<const double>(std::vector<double>{2, 4, 6})), 1.0, 1e-15);
    EXPECT_NEAR(ncc(std::span<const double>(v), std::span<const double>(std::vector<double>{3, 2, 1})), -1.0, 1e-15);
    EXPECT_THROW(ncc(std::span<const double>(v), std::span<const double>(std::vector<double>{1, 1, 1})), ArgumentError);
    EXPECT_THROW(ncc(std::span<const double>(v), std::span<const double>(std::vector<double>{1, 1})), ArgumentError);

    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    for (int t = 0; t < 200; ++t) {
        std::vector<double> a(2 + rng() % 60), b(a.size());
        for (auto& x : a) x = g(rng);
        for (auto& x : b) x = g(rng);
        const double got = ncc(std::span<const double>(a), std::span<const double>(b));
        ASSERT_NEAR(got, oracle::ncc(a, b), 1e-9);
        const double s = 0.1 + std::abs(g(rng)), off = g(rng);
        std::vector<double> affine(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) affine[i] = s * a[i] + off;
        ASSERT_NEAR(ncc(std::span<const double>(a), std::span<const double>(affine)), 1.0, 1e-9);
    }
}

TEST(Invariance, TranslationAndScaling) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 50; ++t) {
        auto a = random_points(6, 3, rng), b = random_points(5, 3, rng, 1.0);
        const double sa = separation_absolute(a, b), sp = separation_pairwise(a, b), ov = overlap_ratio(a, b);
        const double scale = 0.5 + (rng() % 100) / 10.0, shift = -3.0 + (rng() % 60) / 10.0;
        for (auto* m : {&a, &b})
            for (auto& x : m->data()) x = scale * x + shift;
        ASSERT_NEAR(separation_absolute(a, b), sa, 1e-9);
        ASSERT_NEAR(separation_pairwise(a, b), sp, 1e-9);
        ASSERT_EQ(overlap_ratio(a, b), ov);
    }
}

TEST(LabeledVectors, ExcludesFailedRows) {
    ConceptBank bank("L", 2);
    bank.append({"a", "car", "L", 0, 1, false}, std::vector<float>{1, 2});
    bank.append({"b", "car", "L", 0, 0, true}, std::vector<float>{0, 0});
    bank.append({"c", "bus", "L", 0, 1, false}, std::vector<float>{3, 4});
    const auto lv = labeled_vectors(bank);
    EXPECT_EQ(lv.matrix.rows(), 2u);
    EXPECT_EQ(lv.excluded_failed, 1u);
    EXPECT_EQ(lv.source_rows, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(lv.labels, (std::vector<std::string>{"car", "bus"}));
    EXPECT_EQ(lv.subset("bus").row(0)[1], 4.0f);
}
