#include <gtest/gtest.h>

#include <random>

#include "loce/commands.hpp"
#include "loce/svg.hpp"

using namespace loce;

namespace {

std::size_t count(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

MatrixD blob_points(std::size_t groups, std::size_t per, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.3);
    MatrixD m(groups * per, 2);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double c = 10.0 * static_cast<double>(i / per);
        m(i, 0) = c + g(rng);
        m(i, 1) = (i / per == 1 ? 8.0 : 0.0) + g(rng);
    }
    return m;
}

}  // namespace

TEST(Svg, NumberFormatting) {
    EXPECT_EQ(svg::num(1.0), "1.00");
    EXPECT_EQ(svg::num(-0.001), "0.00");
    EXPECT_EQ(svg::num(-2.345), "-2.35");
    EXPECT_EQ(svg::escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
}

TEST(Svg, DendrogramHasOneBracketPerCluster) {
    const auto pts = blob_points(2, 8, 1);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < 16; ++i) labels.push_back(i < 8 ? "left" : "right");
    const auto table = linkage(pts, Linkage::ward, Metric::euclidean);
    const auto part = adaptive_select(table, labels);
    ASSERT_EQ(part.n_clusters, 2u);
    const auto a = svg::dendrogram(table, part, labels, "demo");
    EXPECT_EQ(a, svg::dendrogram(table, part, labels, "demo"));
    EXPECT_EQ(count(a, "class=\"cluster-bracket\""), 2u);
    EXPECT_EQ(count(a, "class=\"link\""), 15u);
    EXPECT_EQ(a.rfind("<?xml", 0), 0u);
    EXPECT_NE(a.find("<svg xmlns"), std::string::npos);
    EXPECT_NE(a.find("</svg>"), std::string::npos);
}

TEST(Svg, ScatterDrawsOneEllipsePerComponent) {
    const auto pts = blob_points(3, 20, 2);
    const auto sel = select_gmm(pts, 1, 6, 0);
    ASSERT_EQ(sel.best.components(), 3u);
    std::vector<std::string> labels(60, "car");
    const auto s = svg::scatter(pts, labels, {sel.best}, "gmm");
    EXPECT_EQ(count(s, "class=\"gmm-ellipse\""), 3u);
    EXPECT_EQ(count(s, "class=\"point\""), 60u);
    EXPECT_EQ(s, svg::scatter(pts, labels, {sel.best}, "gmm"));
}

TEST(Svg, HeatmapAndLineChart) {
    const auto h = svg::heatmap({{NAN, 0.5}, {0.25, NAN}}, {"a", "b"}, "sep");
    EXPECT_EQ(count(h, "class=\"cell\""), 4u);
    const auto c = svg::line_chart({{"car", {{1, 1.0}, {3, 0.5}}}, {"bus", {{1, 0.2}, {3, 0.4}}}}, "k", "mAP");
    EXPECT_EQ(count(c, "class=\"curve\""), 2u);
}

TEST(Report, Fnv1aKnownValues) {
    EXPECT_EQ(report::fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(report::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(report::config_hash(nlohmann::json::object()).size(), 16u);
}

TEST(Report, MeanStdAndNulls) {
    const auto ms = report::mean_std({1.0, 3.0});
    EXPECT_DOUBLE_EQ(ms.mean, 2.0);
    EXPECT_DOUBLE_EQ(ms.std, 1.0);
    EXPECT_EQ(report::mean_std({}).mean, 0.0);
    EXPECT_TRUE(report::number_or_null(NAN).is_null());
    EXPECT_EQ(report::number_or_null(0.5).get<double>(), 0.5);
}

TEST(Report, ConfigHashStableAndIgnoresOutputLocation) {
    cli::RunConfig a;
    a.container = "c";
    const auto h = cli::provenance_hash(a);
    EXPECT_EQ(h, cli::provenance_hash(a));
    cli::RunConfig b = a;
    b.output_dir = "/elsewhere";
    b.threads = 8;
    EXPECT_EQ(cli::provenance_hash(b), h);
    b.seed = 1;
    EXPECT_NE(cli::provenance_hash(b), h);
    cli::RunConfig c = a;
    c.optimizer.learning_rate = 0.05;
    EXPECT_NE(cli::provenance_hash(c), h);
}

TEST(Report, ConfigJsonRoundtripAndUnknownKeys) {
    cli::RunConfig a;
    a.container = "x";
    a.layers = {"l1"};
    a.clustering.mode = "threshold";
    a.clustering.threshold = 2.5;
    a.gmm.k_max = 7;
    cli::RunConfig b;
    cli::apply_json(cli::to_json(a), b);
    EXPECT_EQ(cli::to_json(b), cli::to_json(a));
    EXPECT_THROW(cli::apply_json({{"bogus", 1}}, b), ArgumentError);
    EXPECT_THROW(cli::apply_json({{"optimizer", {{"lr", 1}}}}, b), ArgumentError);
    EXPECT_THROW(cli::apply_json({{"seed", "seven"}}, b), ArgumentError);
}
