#pragma once

// Global concept-vector baselines (Net2Vec, sparsified Net2Vec, single-filter
// NetDissect) and the shared segmentation evaluation used to compare any
// concept vector against local ones.

#include <numeric>
#include <random>

#include "loce/optimizer.hpp"

namespace loce {

enum class VectorMethod { net2vec, net2vec_topk, netdissect, gloce, sgloce, loce };

inline const char* to_string(VectorMethod m) {
    switch (m) {
        case VectorMethod::net2vec: return "net2vec";
        case VectorMethod::net2vec_topk: return "net2vec_topk";
        case VectorMethod::netdissect: return "netdissect";
        case VectorMethod::gloce: return "gloce";
        case VectorMethod::sgloce: return "sgloce";
        case VectorMethod::loce: return "loce";
    }
    return "?";
}

struct GlobalConceptVector {
    std::vector<float> vector;
    VectorMethod method = VectorMethod::net2vec;
    std::string concept_label;
    std::string layer_id;
};

struct Evaluation {
    double mean_iou = 0.0;
    std::vector<double> per_sample;
};

namespace detail {

inline std::size_t common_channels(std::span<const PreparedSample> samples) {
    require(!samples.empty(), "no samples given");
    const std::size_t c = samples.front().act.channels;
    for (const auto& s : samples) {
        if (s.act.channels != c) {
            throw ArgumentError("samples have inconsistent channel counts");
        }
    }
    return c;
}

}  // namespace detail

// Mini-batch AdamW over the summed per-sample loss (averaged per batch).
inline GlobalConceptVector optimize_net2vec(std::span<const PreparedSample> samples, const OptimizerConfig& cfg) {
    cfg.validate();
    const std::size_t channels = detail::common_channels(samples);
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!samples[i].mask.empty_foreground()) {
            usable.push_back(i);
        }
    }
    if (usable.empty()) {
        throw ArgumentError("optimize_net2vec: all samples have empty masks");
    }
    auto theta = init_vector(cfg.init_strategy, channels, cfg.seed);
    AdamW opt(channels, cfg.learning_rate, cfg.adam);
    std::mt19937_64 rng(cfg.seed);
    std::vector<double> grad(channels);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(usable.begin(), usable.end(), rng);
        for (std::size_t start = 0; start < usable.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(usable.size(), start + cfg.batch_size);
            const double weight = 1.0 / static_cast<double>(end - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = start; b < end; ++b) {
                const auto& s = samples[usable[b]];
                const auto p = project(std::span<const double>(theta), s.act);
                detail::accumulate_channel_gradient(detail::loss_logit_gradient(p, s.mask), s.act, grad, weight);
            }
            opt.step(theta, grad);
        }
    }
    return {to_float_vector(theta), VectorMethod::net2vec, {}, samples.front().act.layer_id};
}

// Keeps the k largest-magnitude entries; ties go to the lower index.
inline std::vector<float> sparsify_topk(std::span<const float> v, std::size_t k) {
    if (k < 1 || k > v.size()) {
        throw ArgumentError("sparsify_topk: k must be in [1, C]");
    }
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::fabs(v[a]) > std::fabs(v[b]); });
    std::vector<float> out(v.size(), 0.0f);
    for (std::size_t i = 0; i < k; ++i) {
        out[order[i]] = v[order[i]];
    }
    return out;
}

inline GlobalConceptVector sparsify_topk(const GlobalConceptVector& g, std::size_t k) {
    return {sparsify_topk(std::span<const float>(g.vector), k), VectorMethod::net2vec_topk, g.concept_label,
            g.layer_id};
}

// Binarizes sign(v . act) and scores it against each sample's mask.
template <typename T>
Evaluation evaluate_concept_vector(std::span<const T> v, std::span<const PreparedSample> samples) {
    Evaluation e;
    e.per_sample.resize(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].act.channels != v.size()) {
            throw ArgumentError("evaluate_concept_vector: vector length does not match activations");
        }
        e.per_sample[i] = iou(binarize(project(v, samples[i].act)), samples[i].mask);
    }
    if (!samples.empty()) {
        e.mean_iou = std::accumulate(e.per_sample.begin(), e.per_sample.end(), 0.0) /
                     static_cast<double>(samples.size());
    }
    return e;
}

// Each sample is scored with whichever candidate vector segments it best.
inline Evaluation evaluate_best_matching(const MatrixF& candidates, std::span<const PreparedSample> samples) {
    require(candidates.rows() >= 1, "evaluate_best_matching: no candidate vectors");
    Evaluation e;
    e.per_sample.assign(samples.size(), 0.0);
    for (std::size_t r = 0; r < candidates.rows(); ++r) {
        const auto scores = evaluate_concept_vector(candidates.row(r), samples);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            e.per_sample[i] = std::max(e.per_sample[i], scores.per_sample[i]);
        }
    }
    if (!samples.empty()) {
        e.mean_iou = std::accumulate(e.per_sample.begin(), e.per_sample.end(), 0.0) /
                     static_cast<double>(samples.size());
    }
    return e;
}

struct FilterScore {
    std::size_t channel = 0;
    double mean_iou = 0.0;
};

// Best single channel as a one-hot concept vector; ties go to the lowest index.
inline GlobalConceptVector netdissect_best_filter(std::span<const PreparedSample> samples,
                                                  std::vector<FilterScore>* all_scores = nullptr) {
    const std::size_t channels = detail::common_channels(samples);
    bool any = std::any_of(samples.begin(), samples.end(),
                           [](const PreparedSample& s) { return !s.mask.empty_foreground(); });
    if (!any) {
        throw ArgumentError("netdissect_best_filter: all samples have empty masks");
    }
    FilterScore best{0, -1.0};
    for (std::size_t k = 0; k < channels; ++k) {
        double total = 0.0;
        for (const auto& s : samples) {
            std::vector<std::uint8_t> bits(s.act.plane());
            auto ch = s.act.channel(k);
            for (std::size_t q = 0; q < bits.size(); ++q) {
                bits[q] = ch[q] > 0.0f ? 1 : 0;
            }
            total += iou(ConceptMask(s.act.height, s.act.width, std::move(bits)), s.mask);
        }
        const double mean = total / static_cast<double>(samples.size());
        if (all_scores) {
            all_scores->push_back({k, mean});
        }
        if (mean > best.mean_iou) {
            best = {k, mean};
        }
    }
    std::vector<float> one_hot(channels, 0.0f);
    one_hot[best.channel] = 1.0f;
    return {one_hot, VectorMethod::netdissect, {}, samples.front().act.layer_id};
}

}  // namespace loce
