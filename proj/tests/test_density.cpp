#include <gtest/gtest.h>

#include <random>

#include "loce/density.hpp"
#include "test_util.hpp"

using namespace loce;

namespace {

MatrixD blobs(const std::vector<std::array<double, 2>>& centers, std::size_t per, double sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, sigma);
    MatrixD m(centers.size() * per, 2);
    for (std::size_t c = 0; c < centers.size(); ++c)
        for (std::size_t i = 0; i < per; ++i) {
            m(c * per + i, 0) = centers[c][0] + g(rng);
            m(c * per + i, 1) = centers[c][1] + g(rng);
        }
    return m;
}

double pair_dist(const MatrixD& m, std::size_t a, std::size_t b) {
    return std::hypot(m(a, 0) - m(b, 0), m(a, 1) - m(b, 1));
}

}  // namespace

TEST(Pca, TwoDimensionalInputIsIsometric) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    MatrixD x(12, 2);
    for (auto& v : x.data()) v = g(rng);
    const auto e = reduce_2d(x);
    EXPECT_EQ(e.source, EmbeddingSource::pca);
    for (std::size_t a = 0; a < 12; ++a)
        for (std::size_t b = 0; b < 12; ++b) EXPECT_NEAR(pair_dist(e.points, a, b), std::hypot(x(a, 0) - x(b, 0), x(a, 1) - x(b, 1)), 1e-9);
    EXPECT_GE(e.explained_variance[0], e.explained_variance[1]);
}

TEST(Pca, PlanarDataInHigherDimensionKeepsDistances) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    MatrixD x(20, 5);
    for (std::size_t i = 0; i < 20; ++i) {
        const double s = 3 * g(rng), t = g(rng);
        const double row[5] = {s + t, s - t, 0.5 * s, 2.0 * t, 1.0};
        for (std::size_t k = 0; k < 5; ++k) x(i, k) = row[k];
    }
    const auto e = reduce_2d(x);
    for (std::size_t a = 0; a < 20; ++a)
        for (std::size_t b = a + 1; b < 20; ++b) {
            double d = 0;
            for (std::size_t k = 0; k < 5; ++k) d += (x(a, k) - x(b, k)) * (x(a, k) - x(b, k));
            EXPECT_NEAR(pair_dist(e.points, a, b), std::sqrt(d), 1e-8);
        }
}

TEST(Pca, CenteredAndSignConventionStable) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    MatrixD x(15, 4);
    for (auto& v : x.data()) v = g(rng);
    const auto e = reduce_2d(x);
    double m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < 15; ++i) m0 += e.points(i, 0), m1 += e.points(i, 1);
    EXPECT_NEAR(m0, 0.0, 1e-9);
    EXPECT_NEAR(m1, 0.0, 1e-9);

    // Negating every input flips the data but the sign rule pins the axes,
    // so the embedding is negated too.
    MatrixD neg = x;
    for (auto& v : neg.data()) v = -v;
    const auto f = reduce_2d(neg);
    for (std::size_t i = 0; i < 15; ++i) {
        EXPECT_NEAR(f.points(i, 0), -e.points(i, 0), 1e-9);
        EXPECT_NEAR(f.points(i, 1), -e.points(i, 1), 1e-9);
    }
    // Wide data (C > N) takes the Gram path and must agree on distances.
    MatrixD wide(4, 30);
    for (auto& v : wide.data()) v = g(rng);
    EXPECT_EQ(reduce_2d(wide).points.rows(), 4u);
}

TEST(Pca, Errors) {
    EXPECT_THROW(reduce_2d(MatrixD(2, 3, 1.0)), ArgumentError);
    EXPECT_THROW(reduce_2d(MatrixD(5, 3, 2.0)), ArgumentError);
    MatrixD nan(3, 2, 0.0);
    nan(1, 1) = NAN;
    EXPECT_THROW(reduce_2d(nan), ArgumentError);
}

TEST(ExternalEmbedding, LoadsAndValidates) {
    TempDir dir("emb");
    std::vector<double> v{0, 1, 2, 3, 4, 5};
    npy::write<double>(dir / "e.npy", {3, 2}, std::span<const double>(v));
    const auto e = load_external_embedding(dir / "e.npy", 3);
    EXPECT_EQ(e.source, EmbeddingSource::external);
    EXPECT_EQ(e.points(2, 1), 5.0);
    EXPECT_THROW(load_external_embedding(dir / "e.npy", 4), DataError);

    std::vector<float> f{0, 1, NAN, 3};
    npy::write<float>(dir / "nan.npy", {2, 2}, std::span<const float>(f));
    EXPECT_THROW(load_external_embedding(dir / "nan.npy", 2), DataError);
    npy::write<double>(dir / "three.npy", {2, 3}, std::span<const double>(v));
    EXPECT_THROW(load_external_embedding(dir / "three.npy", 2), DataError);
}

TEST(Gmm, SingleComponentIsSampleMoments) {
    const auto pts = blobs({{1.0, -2.0}}, 200, 0.7, 4);
    const auto m = gmm_fit(pts, 1, 0);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < 200; ++i) mx += pts(i, 0) / 200, my += pts(i, 1) / 200;
    double cxx = 0, cxy = 0, cyy = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        cxx += (pts(i, 0) - mx) * (pts(i, 0) - mx) / 200;
        cxy += (pts(i, 0) - mx) * (pts(i, 1) - my) / 200;
        cyy += (pts(i, 1) - my) * (pts(i, 1) - my) / 200;
    }
    EXPECT_NEAR(m.weights[0], 1.0, 1e-12);
    EXPECT_NEAR(m.means[0][0], mx, 1e-9);
    EXPECT_NEAR(m.means[0][1], my, 1e-9);
    EXPECT_NEAR(m.covariances[0].xx, cxx + 1e-6, 1e-9);
    EXPECT_NEAR(m.covariances[0].xy, cxy, 1e-9);
    EXPECT_NEAR(m.covariances[0].yy, cyy + 1e-6, 1e-9);
    EXPECT_NEAR(m.bic, -2.0 * m.log_likelihood + 5.0 * std::log(200.0), 1e-9);
}

TEST(Gmm, TwoBlobsRecovered) {
    const auto pts = blobs({{0, 0}, {8, 8}}, 60, 0.5, 5);
    const auto m = gmm_fit(pts, 2, 1);
    EXPECT_TRUE(m.converged);
    std::vector<std::array<double, 2>> means = m.means;
    std::sort(means.begin(), means.end());
    EXPECT_NEAR(means[0][0], 0.0, 0.3);
    EXPECT_NEAR(means[1][1], 8.0, 0.3);
    EXPECT_NEAR(m.weights[0], 0.5, 0.01);
    const auto dom = dominant_components(responsibilities(m, pts));
    for (std::size_t i = 1; i < 60; ++i) EXPECT_EQ(dom[i], dom[0]);
    for (std::size_t i = 61; i < 120; ++i) EXPECT_EQ(dom[i], dom[60]);
    EXPECT_NE(dom[0], dom[60]);
}

TEST(Gmm, DeterministicPerSeed) {
    const auto pts = blobs({{0, 0}, {3, 1}, {1, 4}}, 30, 0.8, 6);
    const auto a = gmm_fit(pts, 3, 42), b = gmm_fit(pts, 3, 42);
    EXPECT_EQ(a.log_likelihood, b.log_likelihood);
    EXPECT_EQ(a.means, b.means);
}

TEST(Gmm, LogLikelihoodMonotone) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
        const auto pts = blobs({{0, 0}, {2, 2}, {-3, 1}}, 25, 1.0, rng());
        for (std::size_t k = 1; k <= 5; ++k) {
            const auto m = gmm_fit(pts, k, rng());
            for (std::size_t i = 1; i < m.ll_history.size(); ++i) {
                ASSERT_GE(m.ll_history[i] - m.ll_history[i - 1], -1e-8) << "k=" << k << " iter " << i;
            }
        }
    }
}

TEST(Gmm, CollapsingComponentsKeepHistoryMonotone) {
    // Many components on few points: some shrink onto single samples and hit
    // the variance floor.
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto pts = blobs({{0, 0}, {6, 0}}, 6, 1.0, 300 + seed);
        const auto m = gmm_fit(pts, 8, seed);
        for (std::size_t i = 1; i < m.ll_history.size(); ++i) {
            ASSERT_GE(m.ll_history[i] - m.ll_history[i - 1], -1e-8) << "seed " << seed;
        }
        EXPECT_NEAR(m.log_likelihood, m.ll_history.back() * static_cast<double>(pts.rows()), 1e-9);
        EXPECT_TRUE(std::isfinite(m.bic));
    }
}

TEST(Gmm, BicSelectsThreeOnSeparatedBlobs) {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto pts = blobs({{0, 0}, {10, 0}, {5, 9}}, 40, 0.8, 100 + seed);
        const auto sel = select_gmm(pts, 1, 8, seed);
        hits += sel.best.components() == 3;
        EXPECT_EQ(sel.sweep.size(), 8u);
    }
    EXPECT_GE(hits, 18);
}

TEST(Gmm, SingleCloudPrefersOneComponent) {
    int ones = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ones += select_gmm(blobs({{0, 0}}, 80, 1.0, 200 + seed), 1, 5, seed).best.components() == 1;
    }
    EXPECT_GE(ones, 6);
}

TEST(Gmm, ResponsibilitiesAreDistributions) {
    const auto pts = blobs({{0, 0}, {4, 0}}, 30, 1.0, 8);
    const auto m = gmm_fit(pts, 3, 2);
    const auto r = responsibilities(m, pts);
    for (std::size_t i = 0; i < r.rows(); ++i) {
        double s = 0;
        for (double x : r.row(i)) {
            EXPECT_GE(x, 0.0);
            s += x;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
    const auto one = gmm_fit(pts, 1, 0);
    const auto one_resp = responsibilities(one, pts);
    for (double x : one_resp.data()) EXPECT_NEAR(x, 1.0, 1e-12);

    const auto sep = gmm_fit(blobs({{0, 0}, {20, 20}}, 30, 0.5, 9), 2, 3);
    MatrixD at_mean(1, 2, std::vector<double>{sep.means[0][0], sep.means[0][1]});
    EXPECT_GT(responsibilities(sep, at_mean)(0, 0), 0.99);
}

TEST(Gmm, ParameterCountAndErrors) {
    EXPECT_EQ(gmm_parameter_count(1), 5u);
    EXPECT_EQ(gmm_parameter_count(3), 17u);
    EXPECT_THROW(gmm_fit(MatrixD(3, 3), 1, 0), ArgumentError);
    EXPECT_THROW(gmm_fit(MatrixD(2, 2), 3, 0), ArgumentError);
    EXPECT_THROW(select_gmm(MatrixD(4, 2), 3, 2, 0), ArgumentError);
    const auto sel = select_gmm(blobs({{0, 0}}, 3, 1.0, 1), 1, 40, 0);
    EXPECT_EQ(sel.sweep.size(), 3u);
}
