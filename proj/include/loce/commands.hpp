#pragma once

// Command implementations behind the `loce` CLI. Each command reads a RunConfig,
// writes its artifacts under output_dir and returns the JSON report it wrote.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "loce/baselines.hpp"
#include "loce/clustering.hpp"
#include "loce/density.hpp"
#include "loce/metrics.hpp"
#include "loce/optimizer.hpp"
#include "loce/report.hpp"
#include "loce/svg.hpp"
#include "loce/synthetic.hpp"
#include "loce/tensor_store.hpp"

namespace loce::cli {

using nlohmann::json;

struct ClusteringConfig {
    Linkage method = Linkage::ward;
    Metric metric = Metric::euclidean;
    std::string mode = "adaptive";  // adaptive | threshold | count
    double cpt = 0.8;
    double cst_fraction = 0.05;
    std::optional<double> threshold;
    std::size_t clusters = 2;
};

struct GmmConfig {
    std::size_t k_min = 1;
    std::size_t k_max = 40;
    std::string mode = "label-free";  // label-free | label-wise
    std::string embedding;           // optional external N x 2 NPY
    GmmOptions options;
};

struct MetricsConfig {
    std::vector<std::size_t> k_values{1, 3, 5, 10, 20};
    std::string noisy_bank;
    bool svg = true;
};

struct RetrieveConfig {
    std::vector<std::string> queries;  // empty: every valid row
    std::size_t k = 5;
};

struct BaselinesConfig {
    std::size_t topk = 16;
};

struct SynthConfig {
    std::size_t samples_per_group = 6;
    bool include_failure = true;
    bool include_token_layer = true;
};

struct RunConfig {
    std::string container;
    std::vector<std::string> layers;
    std::vector<std::string> concepts;
    std::string output_dir = "loce_out";
    std::string bank;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    OptimizerConfig optimizer;
    ClusteringConfig clustering;
    GmmConfig gmm;
    MetricsConfig metrics;
    RetrieveConfig retrieve;
    BaselinesConfig baselines;
    SynthConfig synth;

    void validate() const {
        optimizer.validate();
        require(clustering.mode == "adaptive" || clustering.mode == "threshold" || clustering.mode == "count",
                "clustering.mode must be adaptive, threshold or count");
        require(clustering.mode != "threshold" || clustering.threshold.has_value(),
                "clustering.mode=threshold needs clustering.threshold");
        require(clustering.clusters >= 1, "clustering.clusters must be >= 1");
        require(clustering.cpt >= 0.0 && clustering.cpt <= 1.0, "clustering.cpt must lie in [0, 1]");
        require(clustering.cst_fraction >= 0.0 && clustering.cst_fraction <= 1.0,
                "clustering.cst_fraction must lie in [0, 1]");
        require(!(clustering.method == Linkage::ward && clustering.metric == Metric::cosine),
                "ward linkage requires the euclidean metric");
        require(gmm.mode == "label-free" || gmm.mode == "label-wise", "gmm.mode must be label-free or label-wise");
        require(gmm.k_min >= 1 && gmm.k_min <= gmm.k_max, "gmm.k_min must be in [1, k_max]");
        require(!metrics.k_values.empty(), "metrics.k_values must not be empty");
        for (auto k : metrics.k_values) require(k >= 1, "metrics.k_values entries must be >= 1");
        require(retrieve.k >= 1, "retrieve.k must be >= 1");
        require(baselines.topk >= 1, "baselines.topk must be >= 1");
        require(synth.samples_per_group >= 1, "synth.samples_per_group must be >= 1");
    }
};

namespace detail {

// Reads `key` from `obj` into `out` if present; unknown keys are rejected by
// the caller so typos do not pass silently.
template <typename T>
void read_opt(const json& obj, const char* key, T& out, const std::string& section) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ArgumentError("config: " + section + "." + key + " has the wrong type");
    }
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& section) {
    if (!obj.is_object()) throw ArgumentError("config: " + section + " must be an object");
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ArgumentError("config: unknown key " + (section.empty() ? key : section + "." + key));
    }
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
    const auto& o = c.optimizer;
    return {
        {"container", c.container},
        {"layers", c.layers},
        {"concepts", c.concepts},
        {"output_dir", c.output_dir},
        {"bank", c.bank},
        {"seed", c.seed},
        {"threads", c.threads},
        {"optimizer",
         {{"init", to_string(o.init_strategy)},
          {"learning_rate", o.learning_rate},
          {"epochs", o.epochs},
          {"resolution", {o.resolution.height, o.resolution.width}},
          {"batch_size", o.batch_size},
          {"beta1", o.adam.beta1},
          {"beta2", o.adam.beta2},
          {"epsilon", o.adam.epsilon},
          {"weight_decay", o.adam.weight_decay}}},
        {"clustering",
         {{"method", to_string(c.clustering.method)},
          {"metric", to_string(c.clustering.metric)},
          {"mode", c.clustering.mode},
          {"cpt", c.clustering.cpt},
          {"cst_fraction", c.clustering.cst_fraction},
          {"threshold", c.clustering.threshold ? json(*c.clustering.threshold) : json(nullptr)},
          {"clusters", c.clustering.clusters}}},
        {"gmm",
         {{"k_min", c.gmm.k_min},
          {"k_max", c.gmm.k_max},
          {"mode", c.gmm.mode},
          {"embedding", c.gmm.embedding},
          {"tolerance", c.gmm.options.tolerance},
          {"max_iterations", c.gmm.options.max_iterations},
          {"regularization", c.gmm.options.regularization}}},
        {"metrics", {{"k_values", c.metrics.k_values}, {"noisy_bank", c.metrics.noisy_bank}, {"svg", c.metrics.svg}}},
        {"retrieve", {{"queries", c.retrieve.queries}, {"k", c.retrieve.k}}},
        {"baselines", {{"topk", c.baselines.topk}}},
        {"synth",
         {{"samples_per_group", c.synth.samples_per_group},
          {"include_failure", c.synth.include_failure},
          {"include_token_layer", c.synth.include_token_layer}}},
    };
}

// Overlays the keys present in `j` on `c`.
inline void apply_json(const json& j, RunConfig& c) {
    using detail::read_opt;
    detail::reject_unknown(j, {"container", "layers", "concepts", "output_dir", "bank", "seed", "threads", "optimizer",
                               "clustering", "gmm", "metrics", "retrieve", "baselines", "synth"},
                           "");
    read_opt(j, "container", c.container, "");
    read_opt(j, "layers", c.layers, "");
    read_opt(j, "concepts", c.concepts, "");
    read_opt(j, "output_dir", c.output_dir, "");
    read_opt(j, "bank", c.bank, "");
    read_opt(j, "seed", c.seed, "");
    read_opt(j, "threads", c.threads, "");
    if (j.contains("optimizer")) {
        const auto& o = j["optimizer"];
        detail::reject_unknown(o, {"init", "learning_rate", "epochs", "resolution", "batch_size", "beta1", "beta2",
                                   "epsilon", "weight_decay"},
                               "optimizer");
        std::string init = to_string(c.optimizer.init_strategy);
        read_opt(o, "init", init, "optimizer");
        c.optimizer.init_strategy = parse_init_strategy(init);
        read_opt(o, "learning_rate", c.optimizer.learning_rate, "optimizer");
        read_opt(o, "epochs", c.optimizer.epochs, "optimizer");
        if (o.contains("resolution")) {
            std::vector<std::size_t> r;
            read_opt(o, "resolution", r, "optimizer");
            require(r.size() == 2, "config: optimizer.resolution must be [height, width]");
            c.optimizer.resolution = {r[0], r[1]};
        }
        read_opt(o, "batch_size", c.optimizer.batch_size, "optimizer");
        read_opt(o, "beta1", c.optimizer.adam.beta1, "optimizer");
        read_opt(o, "beta2", c.optimizer.adam.beta2, "optimizer");
        read_opt(o, "epsilon", c.optimizer.adam.epsilon, "optimizer");
        read_opt(o, "weight_decay", c.optimizer.adam.weight_decay, "optimizer");
    }
    if (j.contains("clustering")) {
        const auto& o = j["clustering"];
        detail::reject_unknown(o, {"method", "metric", "mode", "cpt", "cst_fraction", "threshold", "clusters"},
                               "clustering");
        std::string method = to_string(c.clustering.method), metric = to_string(c.clustering.metric);
        read_opt(o, "method", method, "clustering");
        read_opt(o, "metric", metric, "clustering");
        c.clustering.method = parse_linkage(method);
        c.clustering.metric = parse_metric(metric);
        read_opt(o, "mode", c.clustering.mode, "clustering");
        read_opt(o, "cpt", c.clustering.cpt, "clustering");
        read_opt(o, "cst_fraction", c.clustering.cst_fraction, "clustering");
        if (o.contains("threshold")) {
            if (o["threshold"].is_null()) {
                c.clustering.threshold.reset();
            } else {
                double t = 0.0;
                read_opt(o, "threshold", t, "clustering");
                c.clustering.threshold = t;
            }
        }
        read_opt(o, "clusters", c.clustering.clusters, "clustering");
    }
    if (j.contains("gmm")) {
        const auto& o = j["gmm"];
        detail::reject_unknown(o, {"k_min", "k_max", "mode", "embedding", "tolerance", "max_iterations",
                                   "regularization"},
                               "gmm");
        read_opt(o, "k_min", c.gmm.k_min, "gmm");
        read_opt(o, "k_max", c.gmm.k_max, "gmm");
        read_opt(o, "mode", c.gmm.mode, "gmm");
        read_opt(o, "embedding", c.gmm.embedding, "gmm");
        read_opt(o, "tolerance", c.gmm.options.tolerance, "gmm");
        read_opt(o, "max_iterations", c.gmm.options.max_iterations, "gmm");
        read_opt(o, "regularization", c.gmm.options.regularization, "gmm");
    }
    if (j.contains("metrics")) {
        const auto& o = j["metrics"];
        detail::reject_unknown(o, {"k_values", "noisy_bank", "svg"}, "metrics");
        read_opt(o, "k_values", c.metrics.k_values, "metrics");
        read_opt(o, "noisy_bank", c.metrics.noisy_bank, "metrics");
        read_opt(o, "svg", c.metrics.svg, "metrics");
    }
    if (j.contains("retrieve")) {
        const auto& o = j["retrieve"];
        detail::reject_unknown(o, {"queries", "k"}, "retrieve");
        read_opt(o, "queries", c.retrieve.queries, "retrieve");
        read_opt(o, "k", c.retrieve.k, "retrieve");
    }
    if (j.contains("baselines")) {
        const auto& o = j["baselines"];
        detail::reject_unknown(o, {"topk"}, "baselines");
        read_opt(o, "topk", c.baselines.topk, "baselines");
    }
    if (j.contains("synth")) {
        const auto& o = j["synth"];
        detail::reject_unknown(o, {"samples_per_group", "include_failure", "include_token_layer"}, "synth");
        read_opt(o, "samples_per_group", c.synth.samples_per_group, "synth");
        read_opt(o, "include_failure", c.synth.include_failure, "synth");
        read_opt(o, "include_token_layer", c.synth.include_token_layer, "synth");
    }
    c.optimizer.seed = c.seed;
}

inline RunConfig load_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ArgumentError("cannot parse config file " + path.string() + ": " + e.what());
    }
    RunConfig c;
    apply_json(j, c);
    return c;
}

// Hash over everything that can change results; output location and thread
// count do not.
inline std::string provenance_hash(const RunConfig& c) {
    json j = to_json(c);
    j.erase("output_dir");
    j.erase("threads");
    return report::config_hash(j);
}

inline json report_header(const std::string& command, const RunConfig& c) {
    return {{"schema_version", report::kReportSchemaVersion}, {"command", command}, {"config_hash", provenance_hash(c)}};
}

namespace detail {

inline bool concept_selected(const RunConfig& c, const std::string& label) {
    return c.concepts.empty() || std::find(c.concepts.begin(), c.concepts.end(), label) != c.concepts.end();
}

inline Container filtered_container(const RunConfig& c) {
    if (c.container.empty()) throw ArgumentError("no container given (--container)");
    Container container = read_container(c.container);
    std::erase_if(container.records, [&](const SampleRecord& r) { return !concept_selected(c, r.concept_label); });
    return container;
}

inline std::vector<std::string> selected_layers(const RunConfig& c, const Container& container) {
    if (!c.layers.empty()) {
        for (const auto& l : c.layers) container.layer(l);
        return c.layers;
    }
    std::vector<std::string> out;
    for (const auto& l : container.layers) out.push_back(l.layer_id);
    return out;
}

inline fs::path bank_dir_for(const RunConfig& c, const std::string& layer) {
    return fs::path(c.output_dir) / "banks" / safe_path_component(layer);
}

inline fs::path resolve_bank(const RunConfig& c) {
    if (!c.bank.empty()) return c.bank;
    if (!c.layers.empty()) return bank_dir_for(c, c.layers.front());
    throw ArgumentError("no bank given: pass --bank or --layer");
}

inline ConceptBank filter_bank(const ConceptBank& bank, const RunConfig& c) {
    if (c.concepts.empty()) return bank;
    ConceptBank out(bank.layer_id, bank.dim_c);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        if (concept_selected(c, bank.records[i].concept_label)) {
            out.records.push_back(bank.records[i]);
            out.matrix.append_row(bank.matrix.row(i));
        }
    }
    return out;
}

inline ConceptBank load_bank(const RunConfig& c) { return filter_bank(read_bank(resolve_bank(c)), c); }

// Valid rows with their sample ids, keeping the LabeledVectors row order.
struct BankView {
    LabeledVectors lv;
    std::vector<std::string> sample_ids;
    std::vector<double> train_iou;
};

inline BankView view_of(const ConceptBank& bank) {
    BankView v;
    v.lv = labeled_vectors(bank);
    for (auto r : v.lv.source_rows) {
        v.sample_ids.push_back(bank.records[r].sample_id);
        v.train_iou.push_back(bank.records[r].train_iou);
    }
    return v;
}

inline ClusterPartition make_partition(const LinkageTable& table, const std::vector<std::string>& labels,
                                       const ClusteringConfig& cc) {
    if (cc.mode == "adaptive") return adaptive_select(table, labels, {cc.cpt, cc.cst_fraction});
    if (cc.mode == "threshold") return cut_by_distance(table, *cc.threshold);
    return cut_to_count(table, std::min(cc.clusters, table.n_leaves));
}

inline std::string majority_label(std::span<const std::size_t> rows, const std::vector<std::string>& labels) {
    std::map<std::string, std::size_t> counts;
    for (auto r : rows) ++counts[labels[r]];
    std::string best;
    std::size_t n = 0;
    for (const auto& [label, count] : counts) {
        if (count > n) {
            best = label;
            n = count;
        }
    }
    return best;
}

struct Clustering {
    LinkageTable table;
    ClusterPartition partition;
    std::vector<std::vector<std::size_t>> members;
    std::vector<std::string> majority;
};

inline Clustering cluster_bank(const BankView& v, const ClusteringConfig& cc) {
    if (v.lv.matrix.rows() < 2) throw DataError("clustering needs at least 2 non-failed LoCEs");
    Clustering out;
    out.table = linkage(v.lv.matrix, cc.method, cc.metric);
    out.partition = make_partition(out.table, v.lv.labels, cc);
    out.members = out.partition.members();
    for (const auto& m : out.members) out.majority.push_back(majority_label(m, v.lv.labels));
    return out;
}

inline std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

inline std::vector<double> sorted_values(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v;
}

// Runs `f` and returns its value, or null with the reason when the metric is
// undefined for this input.
template <typename F>
json guarded(F&& f) {
    try {
        return report::number_or_null(f());
    } catch (const ArgumentError& e) {
        return {{"value", nullptr}, {"reason", e.what()}};
    }
}

}  // namespace detail

// --- optimize --------------------------------------------------------------

inline json cmd_optimize(const RunConfig& c) {
    c.validate();
    const Container container = detail::filtered_container(c);
    json rep = report_header("optimize", c);
    rep["container"] = c.container;
    rep["layers"] = json::array();
    for (const auto& layer : detail::selected_layers(c, container)) {
        const ConceptBank bank = optimize_bank(container, layer, c.optimizer, c.threads);
        write_bank(bank, detail::bank_dir_for(c, layer));

        auto summarize = [&](const std::vector<std::size_t>& rows) {
            std::vector<double> ious, losses;
            std::size_t failed = 0;
            for (auto r : rows) {
                const auto& rec = bank.records[r];
                if (rec.failed) {
                    ++failed;
                } else {
                    ious.push_back(rec.train_iou);
                    losses.push_back(rec.final_loss);
                }
            }
            const auto iou_stats = report::mean_std(ious);
            return json{{"n_samples", rows.size()},
                        {"n_failed", failed},
                        {"failure_pct", rows.empty() ? 0.0 : 100.0 * static_cast<double>(failed) /
                                                                 static_cast<double>(rows.size())},
                        {"mean_iou", iou_stats.mean},
                        {"std_iou", iou_stats.std},
                        {"mean_loss", report::mean_std(losses).mean}};
        };
        std::vector<std::size_t> all(bank.size());
        std::iota(all.begin(), all.end(), 0);
        json entry = {{"layer_id", layer}, {"dim_c", bank.dim_c}, {"overall", summarize(all)}};
        entry["concepts"] = json::array();
        for (const auto& label : bank.labels()) {
            json cj = summarize(bank.rows_for_label(label));
            cj["concept_label"] = label;
            entry["concepts"].push_back(cj);
        }
        entry["samples"] = json::array();
        for (const auto& r : bank.records) {
            entry["samples"].push_back({{"sample_id", r.sample_id},
                                        {"concept_label", r.concept_label},
                                        {"train_iou", r.train_iou},
                                        {"final_loss", report::number_or_null(r.final_loss)},
                                        {"failed", r.failed}});
        }
        rep["layers"].push_back(entry);
    }
    report::write_json(fs::path(c.output_dir) / "optimize_summary.json", rep);
    return rep;
}

// --- generalize ------------------------------------------------------------

inline json dendrogram_json(const LinkageTable& t, const detail::BankView& v) {
    json j = {{"n_leaves", t.n_leaves}};
    j["leaves"] = json::array();
    for (std::size_t i = 0; i < t.n_leaves; ++i) {
        j["leaves"].push_back({{"index", i}, {"sample_id", v.sample_ids[i]}, {"concept_label", v.lv.labels[i]}});
    }
    j["merges"] = json::array();
    for (const auto& m : t.rows) j["merges"].push_back({m.left, m.right, m.height, m.size});
    j["leaf_order"] = leaf_order(t);
    return j;
}

inline json cmd_generalize(const RunConfig& c) {
    c.validate();
    const ConceptBank bank = detail::load_bank(c);
    const auto v = detail::view_of(bank);
    const auto cl = detail::cluster_bank(v, c.clustering);
    const fs::path out = fs::path(c.output_dir) / "generalize" / safe_path_component(bank.layer_id);

    json rep = report_header("generalize", c);
    rep["layer_id"] = bank.layer_id;
    rep["n_rows"] = bank.size();
    rep["excluded_failed"] = v.lv.excluded_failed;
    rep["method"] = to_string(c.clustering.method);
    rep["metric"] = to_string(c.clustering.metric);
    rep["mode"] = c.clustering.mode;
    rep["partition_purity"] = partition_purity(cl.partition, v.lv.labels);
    rep["clusters"] = json::array();

    ConceptBank centroids(bank.layer_id, bank.dim_c);
    for (std::size_t k = 0; k < cl.members.size(); ++k) {
        const auto& m = cl.members[k];
        std::vector<std::string> ids;
        double iou_sum = 0.0;
        for (auto r : m) {
            ids.push_back(v.sample_ids[r]);
            iou_sum += v.train_iou[r];
        }
        rep["clusters"].push_back({{"cluster", k},
                                   {"size", m.size()},
                                   {"purity", cluster_purity(m, v.lv.labels)},
                                   {"majority_label", cl.majority[k]},
                                   {"members", ids}});
        const auto cen = centroid(v.lv.matrix, std::span<const std::size_t>(m), CentroidKind::sgloce);
        BankRecord rec{"sgloce_" + std::to_string(k), cl.majority[k], bank.layer_id,
                       std::numeric_limits<double>::quiet_NaN(), iou_sum / static_cast<double>(m.size()), false,
                       "sgloce", m.size()};
        centroids.append(rec, detail::to_float(cen.vector));
    }
    rep["gloce"] = json::array();
    for (const auto& label : v.lv.distinct_labels()) {
        const auto rows = v.lv.rows_for(label);
        double iou_sum = 0.0;
        for (auto r : rows) iou_sum += v.train_iou[r];
        const auto cen = centroid(v.lv.matrix, std::span<const std::size_t>(rows), CentroidKind::gloce);
        BankRecord rec{"gloce_" + label, label, bank.layer_id, std::numeric_limits<double>::quiet_NaN(),
                       iou_sum / static_cast<double>(rows.size()), false, "gloce", rows.size()};
        centroids.append(rec, detail::to_float(cen.vector));
        rep["gloce"].push_back({{"concept_label", label}, {"member_count", rows.size()}});
    }
    write_bank(centroids, out / "centroids");
    report::write_json(out / "dendrogram.json", dendrogram_json(cl.table, v));
    std::vector<std::string> leaf_names;
    for (std::size_t i = 0; i < v.sample_ids.size(); ++i) leaf_names.push_back(v.sample_ids[i]);
    report::write_text(out / "dendrogram.svg",
                       svg::dendrogram(cl.table, cl.partition, leaf_names,
                                       bank.layer_id + " (" + to_string(c.clustering.method) + ", " +
                                           c.clustering.mode + ")"));
    report::write_json(out / "generalize.json", rep);
    return rep;
}

// --- baselines -------------------------------------------------------------

inline json cmd_baselines(const RunConfig& c) {
    c.validate();
    const Container container = detail::filtered_container(c);
    json rep = report_header("baselines", c);
    rep["container"] = c.container;
    rep["layers"] = json::array();
    for (const auto& layer : detail::selected_layers(c, container)) {
        // Reuse a bank written by `optimize` when there is one.
        fs::path bank_path = c.bank.empty() ? detail::bank_dir_for(c, layer) : fs::path(c.bank);
        ConceptBank bank;
        std::string bank_source;
        if (fs::exists(bank_path / "manifest.json")) {
            bank = detail::filter_bank(read_bank(bank_path), c);
            if (bank.layer_id != layer) throw DataError("bank " + bank_path.string() + " belongs to layer " + bank.layer_id);
            bank_source = "file";
        } else {
            bank = optimize_bank(container, layer, c.optimizer, c.threads);
            bank_source = "optimized";
        }
        const auto v = detail::view_of(bank);
        const auto cl = detail::cluster_bank(v, c.clustering);

        const auto records = container.records_for_layer(layer);
        std::vector<PreparedSample> prepared(records.size());
        parallel_for(records.size(), c.threads, [&](std::size_t i) {
            prepared[i] = prepare_sample(load_activation(container, records[i]), load_mask(container, records[i]),
                                         c.optimizer.resolution);
        });

        json entry = {{"layer_id", layer}, {"bank_source", bank_source}, {"concepts", json::array()}};
        ConceptBank vectors(layer, bank.dim_c);
        std::vector<std::string> labels;
        for (const auto& r : records) {
            if (std::find(labels.begin(), labels.end(), r.concept_label) == labels.end()) labels.push_back(r.concept_label);
        }
        for (const auto& label : labels) {
            std::vector<PreparedSample> samples;
            std::vector<double> loce_iou;
            std::size_t empty_masks = 0;
            for (std::size_t i = 0; i < records.size(); ++i) {
                if (records[i].concept_label != label) continue;
                if (prepared[i].mask.empty_foreground()) {
                    ++empty_masks;
                    continue;
                }
                const auto row = bank.row_for_sample(records[i].sample_id);
                if (!row) throw DataError("bank has no row for sample " + records[i].sample_id);
                loce_iou.push_back(bank.records[*row].failed
                                       ? 0.0
                                       : iou(binarize(project(std::span<const float>(bank.matrix.row(*row)), prepared[i].act)),
                                             prepared[i].mask));
                samples.push_back(prepared[i]);
            }
            json cj = {{"concept_label", label}, {"n_samples", samples.size()}, {"skipped_empty_masks", empty_masks}};
            if (samples.empty()) {
                cj["methods"] = nullptr;
                entry["concepts"].push_back(cj);
                continue;
            }
            json methods;
            auto record = [&](VectorMethod m, const std::vector<float>& vec, const Evaluation& e, std::size_t members) {
                const auto s = report::mean_std(e.per_sample);
                methods[to_string(m)] = {{"mean_iou", s.mean}, {"std_iou", s.std}};
                vectors.append({std::string(to_string(m)) + "_" + label, label, layer,
                                std::numeric_limits<double>::quiet_NaN(), s.mean, false, to_string(m), members},
                               vec);
            };
            const auto loce_stats = report::mean_std(loce_iou);
            methods["loce"] = {{"mean_iou", loce_stats.mean}, {"std_iou", loce_stats.std}};

            OptimizerConfig ocfg = c.optimizer;
            const auto n2v = optimize_net2vec(samples, ocfg);
            record(VectorMethod::net2vec, n2v.vector, evaluate_concept_vector(std::span<const float>(n2v.vector), samples),
                   samples.size());
            const auto topk = sparsify_topk(n2v, std::min(c.baselines.topk, n2v.vector.size()));
            record(VectorMethod::net2vec_topk, topk.vector,
                   evaluate_concept_vector(std::span<const float>(topk.vector), samples), samples.size());
            methods["net2vec_topk"]["k"] = std::min(c.baselines.topk, n2v.vector.size());
            std::vector<FilterScore> filter_scores;
            const auto nd = netdissect_best_filter(samples, &filter_scores);
            record(VectorMethod::netdissect, nd.vector, evaluate_concept_vector(std::span<const float>(nd.vector), samples),
                   samples.size());
            methods["netdissect"]["channel"] = std::find(nd.vector.begin(), nd.vector.end(), 1.0f) - nd.vector.begin();

            const auto rows = v.lv.rows_for(label);
            if (!rows.empty()) {
                const auto g = detail::to_float(centroid(v.lv.matrix, std::span<const std::size_t>(rows)).vector);
                record(VectorMethod::gloce, g, evaluate_concept_vector(std::span<const float>(g), samples), rows.size());
                MatrixF candidates;
                std::size_t members = 0;
                for (std::size_t k = 0; k < cl.members.size(); ++k) {
                    if (cl.majority[k] != label) continue;
                    const auto cen = centroid(v.lv.matrix, std::span<const std::size_t>(cl.members[k]));
                    candidates.append_row(std::span<const float>(detail::to_float(cen.vector)));
                    members += cl.members[k].size();
                }
                if (candidates.rows() > 0) {
                    const auto e = evaluate_best_matching(candidates, samples);
                    const auto s = report::mean_std(e.per_sample);
                    methods["sgloce"] = {{"mean_iou", s.mean}, {"std_iou", s.std}, {"n_centroids", candidates.rows()},
                                         {"member_count", members}};
                } else {
                    methods["sgloce"] = {{"mean_iou", nullptr}, {"reason", "no cluster is dominated by this concept"}};
                }
            } else {
                methods["gloce"] = {{"mean_iou", nullptr}, {"reason", "no non-failed LoCEs"}};
                methods["sgloce"] = {{"mean_iou", nullptr}, {"reason", "no non-failed LoCEs"}};
            }
            cj["methods"] = methods;
            entry["concepts"].push_back(cj);
        }
        write_bank(vectors, fs::path(c.output_dir) / "baselines" / safe_path_component(layer) / "vectors");
        rep["layers"].push_back(entry);
    }
    report::write_json(fs::path(c.output_dir) / "baselines" / "baselines.json", rep);
    return rep;
}

// --- metrics ---------------------------------------------------------------

inline json cmd_metrics(const RunConfig& c) {
    c.validate();
    const ConceptBank bank = detail::load_bank(c);
    const auto v = detail::view_of(bank);
    const auto& lv = v.lv;
    const auto labels = lv.distinct_labels();
    const fs::path out = fs::path(c.output_dir) / "metrics" / safe_path_component(bank.layer_id);

    json rep = report_header("metrics", c);
    rep["layer_id"] = bank.layer_id;
    rep["n_rows"] = bank.size();
    rep["excluded_failed"] = lv.excluded_failed;
    rep["labels"] = labels;

    const auto cl = detail::cluster_bank(v, c.clustering);
    rep["purity"] = {{"mode", c.clustering.mode},
                     {"n_clusters", cl.partition.n_clusters},
                     {"partition_purity", partition_purity(cl.partition, lv.labels)}};

    std::map<std::string, MatrixF> subsets;
    for (const auto& l : labels) subsets[l] = lv.subset(l);

    json sep_abs = json::object();
    for (const auto& l : labels) {
        MatrixF others;
        for (std::size_t i = 0; i < lv.labels.size(); ++i) {
            if (lv.labels[i] != l) others.append_row(lv.matrix.row(i));
        }
        sep_abs[l] = detail::guarded([&] { return separation_absolute(subsets[l], others); });
    }
    rep["separation_absolute"] = sep_abs;

    std::vector<std::vector<double>> pair(labels.size(), std::vector<double>(labels.size(), NAN));
    std::vector<std::vector<double>> overlap = pair;
    json pair_j = json::array(), overlap_j = json::array();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        json prow = json::array(), orow = json::array();
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (i == j) {
                prow.push_back(nullptr);
                orow.push_back(nullptr);
                continue;
            }
            const auto& a = subsets[labels[i]];
            const auto& b = subsets[labels[j]];
            json pv = detail::guarded([&] { return separation_pairwise(a, b); });
            json ov = detail::guarded([&] { return overlap_ratio(a, b); });
            if (pv.is_number()) pair[i][j] = pv.get<double>();
            if (ov.is_number()) overlap[i][j] = ov.get<double>();
            prow.push_back(pv);
            orow.push_back(ov);
        }
        pair_j.push_back(prow);
        overlap_j.push_back(orow);
    }
    rep["separation_pairwise"] = pair_j;
    rep["overlap"] = {{"rows_are_source", true}, {"matrix", overlap_j}};

    json outliers = json::object();
    for (const auto& l : labels) {
        const auto rows = lv.rows_for(l);
        if (rows.size() < 2) {
            outliers[l] = nullptr;
            continue;
        }
        json ranking = json::array();
        for (const auto& s : rank_outliers(subsets[l])) {
            ranking.push_back({{"sample_id", v.sample_ids[rows[s.row]]}, {"sum_l2", s.cumulative_l2}});
        }
        outliers[l] = ranking;
    }
    rep["outliers"] = outliers;

    // mAP@k overall and per concept (queries grouped by their label).
    json map_j = json::array();
    std::vector<svg::Curve> curves(labels.size() + 1);
    curves[0].name = "all";
    for (std::size_t i = 0; i < labels.size(); ++i) curves[i + 1].name = labels[i];
    std::map<std::string, std::size_t> label_counts;
    for (const auto& l : lv.labels) ++label_counts[l];
    for (auto k : c.metrics.k_values) {
        const auto overall = map_at_k(lv, k);
        json per = json::object();
        for (std::size_t li = 0; li < labels.size(); ++li) {
            const auto& l = labels[li];
            double total = 0.0;
            std::size_t n = 0;
            for (auto q : lv.rows_for(l)) {
                const std::size_t relevant = label_counts[l] - 1;
                if (relevant == 0) continue;
                const auto hits = retrieve_topk(lv.matrix.row(q), lv.matrix, k, q);
                std::vector<std::uint8_t> rel;
                for (const auto& nb : hits.neighbors) rel.push_back(lv.labels[nb.row] == l);
                total += average_precision_at_k(rel, relevant, k);
                ++n;
            }
            per[l] = n ? json(total / static_cast<double>(n)) : json(nullptr);
            if (n) curves[li + 1].points.emplace_back(static_cast<double>(k), total / static_cast<double>(n));
        }
        std::vector<std::string> skipped;
        for (auto q : overall.skipped) skipped.push_back(v.sample_ids[q]);
        map_j.push_back({{"k", k},
                         {"map", overall.queries ? json(overall.value) : json(nullptr)},
                         {"queries", overall.queries},
                         {"skipped_queries", skipped},
                         {"per_concept", per}});
        if (overall.queries) curves[0].points.emplace_back(static_cast<double>(k), overall.value);
    }
    rep["map_at_k"] = map_j;

    if (!c.metrics.noisy_bank.empty()) {
        const ConceptBank noisy = detail::filter_bank(read_bank(c.metrics.noisy_bank), c);
        if (noisy.dim_c != bank.dim_c) throw DataError("noisy bank has a different channel count");
        json ncc_j = {{"noisy_bank", c.metrics.noisy_bank}};
        std::map<std::string, std::pair<MatrixF, MatrixF>> paired;
        MatrixF all_clean, all_noisy;
        std::size_t unmatched = 0;
        for (std::size_t i = 0; i < bank.size(); ++i) {
            const auto& rec = bank.records[i];
            const auto j = noisy.row_for_sample(rec.sample_id);
            if (!j || rec.failed || noisy.records[*j].failed) {
                ++unmatched;
                continue;
            }
            auto& p = paired[rec.concept_label];
            p.first.append_row(bank.matrix.row(i));
            p.second.append_row(noisy.matrix.row(*j));
            all_clean.append_row(bank.matrix.row(i));
            all_noisy.append_row(noisy.matrix.row(*j));
        }
        ncc_j["unmatched_or_failed"] = unmatched;
        ncc_j["overall"] = detail::guarded([&] { return ncc(all_clean, all_noisy); });
        json per = json::object();
        for (const auto& [label, p] : paired) per[label] = detail::guarded([&] { return ncc(p.first, p.second); });
        ncc_j["per_concept"] = per;
        rep["ncc"] = ncc_j;
    }

    if (c.metrics.svg) {
        report::write_text(out / "separation_pairwise.svg",
                           svg::heatmap(pair, labels, "Pairwise concept separation"));
        report::write_text(out / "overlap.svg", svg::heatmap(overlap, labels, "Concept overlap (row vs column)"));
        report::write_text(out / "map_at_k.svg", svg::line_chart(curves, "k", "mAP@k", "Retrieval mAP@k"));
    }
    report::write_json(out / "metrics.json", rep);
    return rep;
}

// --- retrieve / outliers ---------------------------------------------------

inline json cmd_retrieve(const RunConfig& c) {
    c.validate();
    const ConceptBank bank = detail::load_bank(c);
    const auto v = detail::view_of(bank);
    std::map<std::string, std::size_t> label_counts;
    for (const auto& l : v.lv.labels) ++label_counts[l];

    std::vector<std::string> queries = c.retrieve.queries;
    if (queries.empty()) queries = v.sample_ids;
    json rep = report_header("retrieve", c);
    rep["layer_id"] = bank.layer_id;
    rep["k"] = c.retrieve.k;
    rep["results"] = json::array();
    for (const auto& q : queries) {
        const auto bank_row = bank.row_for_sample(q);
        if (!bank_row) throw DataError("unknown query sample: " + q);
        if (bank.records[*bank_row].failed) {
            rep["results"].push_back({{"query", q}, {"skipped", "optimization failed for this sample"}});
            continue;
        }
        const auto it = std::find(v.lv.source_rows.begin(), v.lv.source_rows.end(), *bank_row);
        const std::size_t row = static_cast<std::size_t>(it - v.lv.source_rows.begin());
        const auto& label = v.lv.labels[row];
        const auto hits = retrieve_topk(v.lv.matrix.row(row), v.lv.matrix, c.retrieve.k, row);
        json neighbors = json::array();
        std::vector<std::uint8_t> rel;
        for (const auto& nb : hits.neighbors) {
            neighbors.push_back({{"sample_id", v.sample_ids[nb.row]},
                                 {"concept_label", v.lv.labels[nb.row]},
                                 {"distance", nb.distance}});
            rel.push_back(v.lv.labels[nb.row] == label);
        }
        const std::size_t relevant = label_counts[label] - 1;
        rep["results"].push_back({{"query", q},
                                  {"concept_label", label},
                                  {"neighbors", neighbors},
                                  {"truncated", hits.truncated},
                                  {"average_precision",
                                   relevant ? json(average_precision_at_k(rel, relevant, c.retrieve.k)) : json(nullptr)}});
    }
    report::write_json(fs::path(c.output_dir) / "retrieve" / (safe_path_component(bank.layer_id) + ".json"), rep);
    return rep;
}

inline json cmd_outliers(const RunConfig& c) {
    c.validate();
    const ConceptBank bank = detail::load_bank(c);
    const auto v = detail::view_of(bank);
    json rep = report_header("outliers", c);
    rep["layer_id"] = bank.layer_id;
    rep["excluded_failed"] = v.lv.excluded_failed;
    rep["concepts"] = json::array();
    for (const auto& label : v.lv.distinct_labels()) {
        const auto rows = v.lv.rows_for(label);
        json entry = {{"concept_label", label}, {"n", rows.size()}};
        if (rows.size() < 2) {
            entry["ranking"] = nullptr;
            entry["reason"] = "fewer than 2 non-failed LoCEs";
        } else {
            json ranking = json::array();
            for (const auto& s : rank_outliers(v.lv.subset(label))) {
                ranking.push_back({{"sample_id", v.sample_ids[rows[s.row]]}, {"sum_l2", s.cumulative_l2}});
            }
            entry["ranking"] = ranking;
        }
        rep["concepts"].push_back(entry);
    }
    report::write_json(fs::path(c.output_dir) / "outliers" / (safe_path_component(bank.layer_id) + ".json"), rep);
    return rep;
}

// --- gmm -------------------------------------------------------------------

inline json gmm_model_json(const GmmModel& m) {
    json comps = json::array();
    for (std::size_t k = 0; k < m.components(); ++k) {
        const auto& cv = m.covariances[k];
        comps.push_back({{"weight", m.weights[k]},
                         {"mean", {m.means[k][0], m.means[k][1]}},
                         {"covariance", {{cv.xx, cv.xy}, {cv.xy, cv.yy}}}});
    }
    return {{"k", m.components()},
            {"components", comps},
            {"log_likelihood", m.log_likelihood},
            {"bic", m.bic},
            {"iterations", m.iterations},
            {"converged", m.converged}};
}

inline json cmd_gmm(const RunConfig& c) {
    c.validate();
    const ConceptBank bank = detail::load_bank(c);
    const auto v = detail::view_of(bank);
    const Embedding2D emb = c.gmm.embedding.empty() ? reduce_2d(v.lv.matrix)
                                                    : load_external_embedding(c.gmm.embedding, v.lv.matrix.rows());
    const fs::path out = fs::path(c.output_dir) / "gmm" / safe_path_component(bank.layer_id);

    json rep = report_header("gmm", c);
    rep["layer_id"] = bank.layer_id;
    rep["excluded_failed"] = v.lv.excluded_failed;
    rep["mode"] = c.gmm.mode;
    json points = json::array();
    for (std::size_t i = 0; i < emb.points.rows(); ++i) {
        points.push_back({{"sample_id", v.sample_ids[i]},
                          {"concept_label", v.lv.labels[i]},
                          {"xy", {emb.points(i, 0), emb.points(i, 1)}}});
    }
    rep["embedding"] = {{"source", to_string(emb.source)},
                        {"explained_variance", {emb.explained_variance[0], emb.explained_variance[1]}},
                        {"points", points}};

    std::vector<std::pair<std::string, std::vector<std::size_t>>> scopes;
    if (c.gmm.mode == "label-free") {
        std::vector<std::size_t> all(emb.points.rows());
        std::iota(all.begin(), all.end(), 0);
        scopes.emplace_back("all", all);
    } else {
        for (const auto& l : v.lv.distinct_labels()) scopes.emplace_back(l, v.lv.rows_for(l));
    }
    rep["mixtures"] = json::array();
    std::vector<GmmModel> models;
    for (const auto& [scope, rows] : scopes) {
        json mj = {{"scope", scope}, {"n_points", rows.size()}};
        if (rows.size() < c.gmm.k_min) {
            mj["model"] = nullptr;
            mj["reason"] = "fewer points than gmm.k_min";
            rep["mixtures"].push_back(mj);
            continue;
        }
        const MatrixD pts = emb.points.select_rows(rows);
        const auto sel = select_gmm(pts, c.gmm.k_min, c.gmm.k_max, c.seed, c.gmm.options);
        json bic = json::array();
        for (const auto& e : sel.sweep) bic.push_back({{"k", e.k}, {"bic", e.bic}, {"log_likelihood", e.log_likelihood}});
        mj["bic_table"] = bic;
        mj["model"] = gmm_model_json(sel.best);
        const auto resp = responsibilities(sel.best, pts);
        json dominant = json::array();
        const auto dom = dominant_components(resp);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            dominant.push_back({{"sample_id", v.sample_ids[rows[i]]}, {"component", dom[i]}});
        }
        mj["dominant_components"] = dominant;
        models.push_back(sel.best);
        rep["mixtures"].push_back(mj);
    }
    report::write_text(out / "gmm.svg", svg::scatter(emb.points, v.lv.labels, models,
                                                     bank.layer_id + " (" + to_string(emb.source) + ", " + c.gmm.mode + ")"));
    report::write_json(out / "gmm.json", rep);
    return rep;
}

// --- synth -----------------------------------------------------------------

inline json cmd_synth(const RunConfig& c) {
    c.validate();
    if (c.container.empty()) throw ArgumentError("synth needs --container as the output path");
    synthetic::ContainerSpec spec;
    spec.seed = c.seed;
    spec.samples_per_group = c.synth.samples_per_group;
    spec.include_failure = c.synth.include_failure;
    spec.include_token_layer = c.synth.include_token_layer;
    const auto container = synthetic::write_demo_container(c.container, spec);
    json rep = report_header("synth", c);
    rep["container"] = c.container;
    rep["n_records"] = container.records.size();
    json layers = json::array();
    for (const auto& l : container.layers) layers.push_back(l.layer_id);
    rep["layers"] = layers;
    return rep;
}

}  // namespace loce::cli
