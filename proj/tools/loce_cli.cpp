// loce: command-line front end for the concept-embedding toolkit.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 data error.

#include <iostream>

#include "CLI11.hpp"
#include "loce/commands.hpp"

using nlohmann::json;

namespace {

struct Flags {
    std::string config;
    std::string container;
    std::vector<std::string> layers;
    std::vector<std::string> concepts;
    std::string output;
    std::string bank;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;

    // optimizer
    std::string init;
    std::optional<double> lr;
    std::optional<int> epochs;
    std::vector<std::size_t> resolution;
    std::optional<std::size_t> batch_size;
    std::optional<double> weight_decay;

    // clustering
    std::string method, metric, mode;
    std::optional<double> cpt, cst_fraction, threshold;
    std::optional<std::size_t> clusters;

    // metrics / retrieval / baselines
    std::vector<std::size_t> k_values;
    std::string noisy_bank;
    bool no_svg = false;
    std::vector<std::string> queries;
    std::optional<std::size_t> k;
    std::optional<std::size_t> topk;

    // gmm
    std::optional<std::size_t> k_min, k_max;
    bool label_wise = false;
    std::string embedding;

    // synth
    std::optional<std::size_t> samples_per_group;
    bool no_failure = false;
    bool no_tokens = false;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON config file; flags given here override it")->check(CLI::ExistingFile);
    cmd->add_option("--container", f.container, "container directory");
    cmd->add_option("--layer", f.layers, "layer id (repeatable; default: all layers)");
    cmd->add_option("--concept", f.concepts, "restrict to these concept labels (repeatable)");
    cmd->add_option("--output", f.output, "output directory (default loce_out)");
    cmd->add_option("--seed", f.seed, "base random seed");
    cmd->add_option("--threads", f.threads, "worker threads, 0 = all cores");
}

void add_bank(CLI::App* cmd, Flags& f) {
    cmd->add_option("--bank", f.bank, "bank directory (default <output>/banks/<layer>)");
}

void add_optimizer(CLI::App* cmd, Flags& f) {
    cmd->add_option("--init", f.init, "init strategy: zeros, ones, uniform, normal");
    cmd->add_option("--lr", f.lr, "AdamW learning rate");
    cmd->add_option("--epochs", f.epochs, "optimization epochs");
    cmd->add_option("--resolution", f.resolution, "optimization grid HEIGHT WIDTH")->expected(2);
    cmd->add_option("--weight-decay", f.weight_decay, "AdamW weight decay");
}

void add_clustering(CLI::App* cmd, Flags& f) {
    cmd->add_option("--method", f.method, "linkage: ward or complete");
    cmd->add_option("--metric", f.metric, "distance: euclidean or cosine");
    cmd->add_option("--mode", f.mode, "cluster selection: adaptive, threshold or count");
    cmd->add_option("--cpt", f.cpt, "purity threshold for adaptive selection");
    cmd->add_option("--cst", f.cst_fraction, "size threshold (fraction of leaves) for adaptive selection");
    cmd->add_option("--threshold", f.threshold, "manual cut height (implies --mode threshold)");
    cmd->add_option("--clusters", f.clusters, "cluster count for --mode count");
}

json overrides(const Flags& f) {
    json j = json::object();
    if (!f.container.empty()) j["container"] = f.container;
    if (!f.layers.empty()) j["layers"] = f.layers;
    if (!f.concepts.empty()) j["concepts"] = f.concepts;
    if (!f.output.empty()) j["output_dir"] = f.output;
    if (!f.bank.empty()) j["bank"] = f.bank;
    if (f.seed) j["seed"] = *f.seed;
    if (f.threads) j["threads"] = *f.threads;

    json o = json::object();
    if (!f.init.empty()) o["init"] = f.init;
    if (f.lr) o["learning_rate"] = *f.lr;
    if (f.epochs) o["epochs"] = *f.epochs;
    if (!f.resolution.empty()) o["resolution"] = f.resolution;
    if (f.batch_size) o["batch_size"] = *f.batch_size;
    if (f.weight_decay) o["weight_decay"] = *f.weight_decay;
    if (!o.empty()) j["optimizer"] = o;

    json c = json::object();
    if (!f.method.empty()) c["method"] = f.method;
    if (!f.metric.empty()) c["metric"] = f.metric;
    if (!f.mode.empty()) c["mode"] = f.mode;
    if (f.cpt) c["cpt"] = *f.cpt;
    if (f.cst_fraction) c["cst_fraction"] = *f.cst_fraction;
    if (f.threshold) {
        c["threshold"] = *f.threshold;
        if (f.mode.empty()) c["mode"] = "threshold";
    }
    if (f.clusters) c["clusters"] = *f.clusters;
    if (!c.empty()) j["clustering"] = c;

    json m = json::object();
    if (!f.k_values.empty()) m["k_values"] = f.k_values;
    if (!f.noisy_bank.empty()) m["noisy_bank"] = f.noisy_bank;
    if (f.no_svg) m["svg"] = false;
    if (!m.empty()) j["metrics"] = m;

    json r = json::object();
    if (!f.queries.empty()) r["queries"] = f.queries;
    if (f.k) r["k"] = *f.k;
    if (!r.empty()) j["retrieve"] = r;

    if (f.topk) j["baselines"] = {{"topk", *f.topk}};

    json g = json::object();
    if (f.k_min) g["k_min"] = *f.k_min;
    if (f.k_max) g["k_max"] = *f.k_max;
    if (f.label_wise) g["mode"] = "label-wise";
    if (!f.embedding.empty()) g["embedding"] = f.embedding;
    if (!g.empty()) j["gmm"] = g;

    json s = json::object();
    if (f.samples_per_group) s["samples_per_group"] = *f.samples_per_group;
    if (f.no_failure) s["include_failure"] = false;
    if (f.no_tokens) s["include_token_layer"] = false;
    if (!s.empty()) j["synth"] = s;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Local concept embeddings: optimize per-sample concept vectors and analyse their distribution."};
    app.require_subcommand(1);
    Flags f;

    auto* optimize = app.add_subcommand("optimize", "optimize one LoCE per sample and write banks + summary");
    add_common(optimize, f);
    add_optimizer(optimize, f);

    auto* baselines = app.add_subcommand("baselines", "compare LoCE, SGloCE, GloCE, Net2Vec, Net2Vec-top-k, NetDissect");
    add_common(baselines, f);
    add_bank(baselines, f);
    add_optimizer(baselines, f);
    add_clustering(baselines, f);
    baselines->add_option("--batch-size", f.batch_size, "Net2Vec mini-batch size");
    baselines->add_option("--topk", f.topk, "channels kept by Net2Vec-top-k");

    auto* generalize = app.add_subcommand("generalize", "cluster a bank, write dendrogram and centroid bank");
    add_common(generalize, f);
    add_bank(generalize, f);
    add_clustering(generalize, f);

    auto* metrics = app.add_subcommand("metrics", "purity, separation, overlap, outliers, mAP@k and NCC");
    add_common(metrics, f);
    add_bank(metrics, f);
    add_clustering(metrics, f);
    metrics->add_option("--k", f.k_values, "k values for mAP@k (repeatable)");
    metrics->add_option("--noisy-bank", f.noisy_bank, "bank from perturbed inputs for NCC");
    metrics->add_flag("--no-svg", f.no_svg, "skip SVG figures");

    auto* retrieve = app.add_subcommand("retrieve", "nearest LoCEs for query samples");
    add_common(retrieve, f);
    add_bank(retrieve, f);
    retrieve->add_option("--query", f.queries, "query sample id (repeatable; default: every sample)");
    retrieve->add_option("-k", f.k, "neighbors per query");

    auto* outliers = app.add_subcommand("outliers", "rank LoCEs of each concept by summed L2 distance");
    add_common(outliers, f);
    add_bank(outliers, f);

    auto* gmm = app.add_subcommand("gmm", "2D embedding + Gaussian mixture with BIC selection");
    add_common(gmm, f);
    add_bank(gmm, f);
    gmm->add_option("--k-min", f.k_min, "smallest component count");
    gmm->add_option("--k-max", f.k_max, "largest component count");
    gmm->add_flag("--label-wise", f.label_wise, "fit one mixture per concept");
    gmm->add_option("--embedding", f.embedding, "external N x 2 NPY embedding instead of PCA");

    auto* synth = app.add_subcommand("synth", "write a synthetic demo container");
    add_common(synth, f);
    synth->add_option("--samples-per-group", f.samples_per_group, "samples per subconcept");
    synth->add_flag("--no-failure", f.no_failure, "omit the sample whose mask vanishes on rescale");
    synth->add_flag("--no-tokens", f.no_tokens, "omit the token layer");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        loce::cli::RunConfig cfg = f.config.empty() ? loce::cli::RunConfig{} : loce::cli::load_config_file(f.config);
        loce::cli::apply_json(overrides(f), cfg);
        cfg.validate();

        json rep;
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "optimize") rep = loce::cli::cmd_optimize(cfg);
        else if (name == "baselines") rep = loce::cli::cmd_baselines(cfg);
        else if (name == "generalize") rep = loce::cli::cmd_generalize(cfg);
        else if (name == "metrics") rep = loce::cli::cmd_metrics(cfg);
        else if (name == "retrieve") rep = loce::cli::cmd_retrieve(cfg);
        else if (name == "outliers") rep = loce::cli::cmd_outliers(cfg);
        else if (name == "gmm") rep = loce::cli::cmd_gmm(cfg);
        else rep = loce::cli::cmd_synth(cfg);
        std::cout << name << ": ok (config " << rep["config_hash"].get<std::string>() << ", output "
                  << (name == "synth" ? cfg.container : cfg.output_dir) << ")\n";
        return 0;
    } catch (const loce::ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const loce::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
}
