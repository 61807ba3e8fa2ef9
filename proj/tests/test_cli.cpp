#include <gtest/gtest.h>

#include <sys/wait.h>

#include "loce/loce.hpp"
#include "test_util.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kLayer = "features.synthetic";

// Runs the CLI, returning its exit status. Output goes to <dir>/last.log.
int run(const fs::path& dir, const std::string& args) {
    const std::string cmd = std::string(LOCE_CLI_PATH) + " " + args + " > " + (dir / "last.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("cli");
        container_ = (dir_->path() / "data").string();
        out_ = (dir_->path() / "out").string();
        ASSERT_EQ(run(dir_->path(), "synth --container " + container_ + " --samples-per-group 4 --seed 3"), 0);
        ASSERT_EQ(run(dir_->path(), "optimize --container " + container_ + " --output " + out_), 0);
    }
    static void TearDownTestSuite() { delete dir_; }

    static std::string common() { return "--container " + container_ + " --output " + out_ + " --layer " + kLayer; }
    static fs::path out() { return out_; }
    static const fs::path& dir() { return dir_->path(); }

    static TempDir* dir_;
    static std::string container_;
    static std::string out_;
};

TempDir* Cli::dir_ = nullptr;
std::string Cli::container_;
std::string Cli::out_;

}  // namespace

TEST_F(Cli, ExitCodes) {
    EXPECT_EQ(run(dir(), "--help"), 0);
    EXPECT_EQ(run(dir(), "optimize --help"), 0);
    EXPECT_EQ(run(dir(), ""), 1);
    EXPECT_EQ(run(dir(), "explode"), 1);
    EXPECT_EQ(run(dir(), "optimize --container x --epochs many"), 1);
    EXPECT_EQ(run(dir(), "optimize --container " + container_ + " --lr -1 --output " + (dir() / "neg").string()), 1);
    EXPECT_EQ(run(dir(), "generalize " + common() + " --mode threshold"), 1);
    EXPECT_EQ(run(dir(), "generalize " + common() + " --metric cosine"), 1);
    EXPECT_EQ(run(dir(), "optimize --container " + (dir() / "missing").string()), 2);
    EXPECT_EQ(run(dir(), "metrics " + common() + " --bank " + (dir() / "nobank").string()), 2);

    spit(dir() / "bad.json", "{\"optimizer\": {\"learning-rate\": 0.1}}");
    EXPECT_EQ(run(dir(), "optimize --config " + (dir() / "bad.json").string()), 1);
    spit(dir() / "broken.json", "{not json");
    EXPECT_EQ(run(dir(), "optimize --config " + (dir() / "broken.json").string()), 1);
}

TEST_F(Cli, OptimizeSummaryGroupsByConcept) {
    const auto s = load(out() / "optimize_summary.json");
    EXPECT_EQ(s["schema_version"], 1);
    EXPECT_EQ(s["command"], "optimize");
    ASSERT_EQ(s["layers"].size(), 2u);
    const auto& layer = s["layers"][0];
    EXPECT_EQ(layer["layer_id"], kLayer);
    EXPECT_EQ(layer["overall"]["n_samples"], 13);
    EXPECT_EQ(layer["overall"]["n_failed"], 1);
    std::map<std::string, json> by_label;
    for (const auto& c : layer["concepts"]) by_label[c["concept_label"]] = c;
    ASSERT_EQ(by_label.size(), 2u);
    EXPECT_EQ(by_label["car"]["n_samples"], 9);
    EXPECT_NEAR(by_label["car"]["failure_pct"].get<double>(), 100.0 / 9.0, 1e-9);
    EXPECT_EQ(by_label["bus"]["failure_pct"].get<double>(), 0.0);
    EXPECT_GT(by_label["bus"]["mean_iou"].get<double>(), 0.5);

    const auto bank = loce::read_bank(out() / "banks" / "features_synthetic");
    EXPECT_EQ(bank.size(), 13u);
    EXPECT_TRUE(bank.records[*bank.row_for_sample("car_tiny")].failed);
}

TEST_F(Cli, TokenLayerMatchesActivationLayer) {
    const auto a = loce::read_bank(out() / "banks" / "features_synthetic");
    const auto t = loce::read_bank(out() / "banks" / "encoder_tokens");
    ASSERT_EQ(t.size(), 12u);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto row = a.row_for_sample(t.records[i].sample_id);
        ASSERT_TRUE(row.has_value());
        EXPECT_TRUE(std::equal(t.matrix.row(i).begin(), t.matrix.row(i).end(), a.matrix.row(*row).begin()));
    }
}

TEST_F(Cli, RepeatRunsAreByteIdentical) {
    const auto other = (dir() / "again").string();
    ASSERT_EQ(run(dir(), "optimize --container " + container_ + " --output " + other + " --threads 3"), 0);
    for (const char* f : {"banks/features_synthetic/loces.npy", "banks/features_synthetic/records.jsonl",
                          "banks/encoder_tokens/loces.npy", "optimize_summary.json"}) {
        EXPECT_EQ(slurp(out() / f), slurp(fs::path(other) / f)) << f;
    }
}

TEST_F(Cli, GeneralizeModes) {
    ASSERT_EQ(run(dir(), "generalize " + common()), 0);
    const fs::path g = out() / "generalize" / "features_synthetic";
    const auto adaptive = load(g / "generalize.json");
    EXPECT_EQ(adaptive["mode"], "adaptive");
    EXPECT_EQ(adaptive["excluded_failed"], 1);
    for (const auto& c : adaptive["clusters"]) {
        EXPECT_TRUE(c["purity"].get<double>() > 0.8 || c["size"].get<double>() < 0.05 * 12);
    }
    const auto dendro = load(g / "dendrogram.json");
    EXPECT_EQ(dendro["merges"].size(), 11u);
    EXPECT_EQ(dendro["leaf_order"].size(), 12u);
    EXPECT_NE(slurp(g / "dendrogram.svg").find("cluster-bracket"), std::string::npos);

    ASSERT_EQ(run(dir(), "generalize " + common() + " --threshold 1e9"), 0);
    const auto one = load(g / "generalize.json");
    EXPECT_EQ(one["mode"], "threshold");
    EXPECT_EQ(one["clusters"].size(), 1u);

    ASSERT_EQ(run(dir(), "generalize " + common() + " --mode count --clusters 3 --method complete"), 0);
    EXPECT_EQ(load(g / "generalize.json")["clusters"].size(), 3u);
}

TEST_F(Cli, CentroidBankIsUsable) {
    ASSERT_EQ(run(dir(), "generalize " + common() + " --mode count --clusters 3"), 0);
    const auto bank = loce::read_bank(out() / "generalize" / "features_synthetic" / "centroids");
    std::size_t sg = 0, gl = 0, members = 0;
    for (const auto& r : bank.records) {
        sg += r.kind == "sgloce";
        gl += r.kind == "gloce";
        if (r.kind == "sgloce") members += r.member_count;
    }
    EXPECT_EQ(sg, 3u);
    EXPECT_EQ(gl, 2u);
    EXPECT_EQ(members, 12u);

    const auto container = loce::read_container(container_);
    std::vector<loce::PreparedSample> samples;
    for (const auto& r : container.records_for_layer(kLayer)) {
        if (r.sample_id == "car_tiny") continue;
        samples.push_back(loce::prepare_sample(loce::load_activation(container, r), loce::load_mask(container, r), {100, 100}));
    }
    const auto e = loce::evaluate_best_matching(bank.matrix, samples);
    EXPECT_GT(e.mean_iou, 0.3);
    // The centroid bank also feeds the metrics command.
    EXPECT_EQ(run(dir(), "outliers " + common() + " --bank " +
                             (out() / "generalize" / "features_synthetic" / "centroids").string()),
              0);
}

TEST_F(Cli, MetricsReport) {
    ASSERT_EQ(run(dir(), "metrics " + common() + " --k 1 --k 3 --noisy-bank " +
                             (out() / "banks" / "features_synthetic").string()),
              0);
    const fs::path m = out() / "metrics" / "features_synthetic";
    const auto r = load(m / "metrics.json");
    EXPECT_EQ(r["labels"].size(), 2u);
    const auto& sep = r["separation_pairwise"];
    ASSERT_EQ(sep.size(), 2u);
    EXPECT_TRUE(sep[0][0].is_null());
    EXPECT_EQ(sep[0][1], sep[1][0]);
    EXPECT_EQ(r["map_at_k"].size(), 2u);
    EXPECT_EQ(r["map_at_k"][0]["queries"], 12);
    EXPECT_EQ(r["ncc"]["overall"].get<double>(), 1.0);
    EXPECT_TRUE(fs::exists(m / "separation_pairwise.svg"));
    EXPECT_TRUE(fs::exists(m / "map_at_k.svg"));
}

TEST_F(Cli, RetrieveAndOutliers) {
    ASSERT_EQ(run(dir(), "retrieve " + common() + " --query car_a_0 --query car_tiny -k 3"), 0);
    const auto r = load(out() / "retrieve" / "features_synthetic.json");
    ASSERT_EQ(r["results"].size(), 2u);
    EXPECT_EQ(r["results"][0]["neighbors"].size(), 3u);
    EXPECT_TRUE(r["results"][1].contains("skipped"));
    EXPECT_EQ(run(dir(), "retrieve " + common() + " --query nobody"), 2);

    ASSERT_EQ(run(dir(), "outliers " + common()), 0);
    const auto o = load(out() / "outliers" / "features_synthetic.json");
    for (const auto& c : o["concepts"]) {
        const auto& rank = c["ranking"];
        for (std::size_t i = 1; i < rank.size(); ++i) {
            EXPECT_GE(rank[i - 1]["sum_l2"].get<double>(), rank[i]["sum_l2"].get<double>());
        }
    }
}

TEST_F(Cli, GmmModes) {
    ASSERT_EQ(run(dir(), "gmm " + common() + " --k-max 4"), 0);
    const fs::path g = out() / "gmm" / "features_synthetic";
    const auto free = load(g / "gmm.json");
    ASSERT_EQ(free["mixtures"].size(), 1u);
    EXPECT_EQ(free["mixtures"][0]["bic_table"].size(), 4u);
    EXPECT_EQ(free["embedding"]["points"].size(), 12u);

    ASSERT_EQ(run(dir(), "gmm " + common() + " --k-max 3 --label-wise"), 0);
    const auto wise = load(g / "gmm.json");
    ASSERT_EQ(wise["mixtures"].size(), 2u);
    EXPECT_EQ(wise["mixtures"][0]["scope"], "car");
    EXPECT_TRUE(wise["mixtures"][1].contains("bic_table"));
    EXPECT_NE(slurp(g / "gmm.svg").find("gmm-ellipse"), std::string::npos);

    // External embedding with the wrong row count is a data error.
    std::vector<double> pts(2 * 5, 0.0);
    loce::npy::write<double>(dir() / "emb.npy", {5, 2}, std::span<const double>(pts));
    EXPECT_EQ(run(dir(), "gmm " + common() + " --embedding " + (dir() / "emb.npy").string()), 2);
}

TEST_F(Cli, BaselinesReport) {
    ASSERT_EQ(run(dir(), "baselines " + common() + " --topk 4"), 0);
    const auto b = load(out() / "baselines" / "baselines.json");
    const auto& layer = b["layers"][0];
    EXPECT_EQ(layer["bank_source"], "file");
    for (const auto& c : layer["concepts"]) {
        const auto& m = c["methods"];
        for (const char* k : {"loce", "net2vec", "net2vec_topk", "netdissect", "gloce", "sgloce"}) {
            EXPECT_TRUE(m.contains(k)) << k;
        }
        EXPECT_EQ(m["net2vec_topk"]["k"], 4);
        EXPECT_GE(m["loce"]["mean_iou"].get<double>(), m["gloce"]["mean_iou"].get<double>());
    }
    const auto vectors = loce::read_bank(out() / "baselines" / "features_synthetic" / "vectors");
    EXPECT_EQ(vectors.size(), 8u);
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
    json cfg = {{"container", container_}, {"seed", 3}, {"output_dir", (dir() / "cfg_a").string()},
                {"layers", {kLayer}}, {"concepts", {"bus"}}};
    spit(dir() / "run.json", cfg.dump());
    ASSERT_EQ(run(dir(), "optimize --config " + (dir() / "run.json").string()), 0);
    const auto a = load(dir() / "cfg_a" / "optimize_summary.json");
    EXPECT_EQ(a["layers"][0]["overall"]["n_samples"], 4);

    ASSERT_EQ(run(dir(), "optimize --config " + (dir() / "run.json").string() + " --seed 9 --output " +
                             (dir() / "cfg_b").string()),
              0);
    const auto b = load(dir() / "cfg_b" / "optimize_summary.json");
    EXPECT_NE(a["config_hash"], b["config_hash"]);
    ASSERT_EQ(run(dir(), "optimize --container " + container_ + " --seed 9 --layer " + kLayer +
                             " --concept bus --output " + (dir() / "cfg_c").string()),
              0);
    EXPECT_EQ(load(dir() / "cfg_c" / "optimize_summary.json")["config_hash"], b["config_hash"]);
}
