#pragma once

// Per-sample concept vector optimization: the weighted pseudo-BCE objective,
// its analytic gradient, initialization strategies, and an AdamW loop.

#include <random>
#include <string>
#include <vector>

#include "loce/common.hpp"
#include "loce/projection.hpp"
#include "loce/tensor_store.hpp"

namespace loce {

enum class InitStrategy { zeros, ones, uniform01, normal };

inline const char* to_string(InitStrategy s) {
    switch (s) {
        case InitStrategy::zeros: return "zeros";
        case InitStrategy::ones: return "ones";
        case InitStrategy::uniform01: return "uniform";
        case InitStrategy::normal: return "normal";
    }
    return "?";
}

inline InitStrategy parse_init_strategy(const std::string& s) {
    if (s == "zeros") return InitStrategy::zeros;
    if (s == "ones") return InitStrategy::ones;
    if (s == "uniform" || s == "uniform01") return InitStrategy::uniform01;
    if (s == "normal") return InitStrategy::normal;
    throw ArgumentError("unknown init strategy: " + s);
}

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerConfig {
    InitStrategy init_strategy = InitStrategy::zeros;
    double learning_rate = 0.1;
    int epochs = 50;
    GridSize resolution{100, 100};
    AdamWParams adam;
    std::uint64_t seed = 0;
    std::size_t batch_size = 32;  // global baselines only

    void validate() const {
        require(learning_rate > 0.0, "learning_rate must be > 0");
        require(epochs >= 1, "epochs must be >= 1");
        require(resolution.height >= 1 && resolution.width >= 1, "resolution dims must be >= 1");
        require(batch_size >= 1, "batch_size must be >= 1");
    }
};

struct LoCE {
    std::vector<float> vector;
    std::string sample_id;
    std::string concept_label;
    std::string layer_id;
    double final_loss = 0.0;
    double train_iou = 0.0;
    bool failed = false;
};

// An activation/mask pair already brought to the optimization resolution.
struct PreparedSample {
    ActivationTensor act;
    ConceptMask mask;
};

inline PreparedSample prepare_sample(const ActivationTensor& act, const ConceptMask& mask, GridSize resolution) {
    return {rescale_activation(act, resolution), rescale_mask(mask, resolution)};
}

// Foreground/background balance: 1 - |c| / (h w).
inline double alpha(const ConceptMask& mask) {
    return 1.0 - static_cast<double>(mask.foreground_count()) / static_cast<double>(mask.size());
}

// L = -(1/hw) * sum[ a*s(P)*c + (1-a)*(1-s(P))*(1-c) ]; lower is better.
inline double loss(const ProjectionMask& p, const ConceptMask& mask) {
    if (p.height != mask.height() || p.width != mask.width()) {
        throw ArgumentError("loss: projection and mask dimensions differ");
    }
    const double a = alpha(mask);
    double sum = 0.0;
    for (std::size_t q = 0; q < p.data.size(); ++q) {
        const double s = sigmoid(p.data[q]);
        sum += mask[q] ? a * s : (1.0 - a) * (1.0 - s);
    }
    return -sum / static_cast<double>(p.data.size());
}

// Attainable infimum of the loss for a given mask (perfectly saturated logits).
inline double loss_lower_bound(const ConceptMask& mask) {
    const double a = alpha(mask);
    const double fg = static_cast<double>(mask.foreground_count());
    const double hw = static_cast<double>(mask.size());
    return -(a * fg + (1.0 - a) * (hw - fg)) / hw;
}

namespace detail {

// dL/dP for every pixel.
inline std::vector<double> loss_logit_gradient(const ProjectionMask& p, const ConceptMask& mask) {
    const double a = alpha(mask);
    const double scale = -1.0 / static_cast<double>(p.data.size());
    std::vector<double> g(p.data.size());
    for (std::size_t q = 0; q < g.size(); ++q) {
        const double s = sigmoid(p.data[q]);
        const double target = mask[q] ? a : -(1.0 - a);
        g[q] = scale * s * (1.0 - s) * target;
    }
    return g;
}

inline void accumulate_channel_gradient(const std::vector<double>& dp, const ActivationTensor& act,
                                        std::span<double> grad, double weight = 1.0) {
    for (std::size_t k = 0; k < act.channels; ++k) {
        auto ch = act.channel(k);
        double sum = 0.0;
        for (std::size_t q = 0; q < ch.size(); ++q) {
            sum += dp[q] * static_cast<double>(ch[q]);
        }
        grad[k] += weight * sum;
    }
}

}  // namespace detail

template <typename T>
std::vector<double> loss_gradient(std::span<const T> v, const ActivationTensor& act, const ConceptMask& mask) {
    if (act.height != mask.height() || act.width != mask.width()) {
        throw ArgumentError("loss_gradient: activation and mask dimensions differ");
    }
    const auto p = project(v, act);
    const auto dp = detail::loss_logit_gradient(p, mask);
    std::vector<double> grad(act.channels, 0.0);
    detail::accumulate_channel_gradient(dp, act, grad);
    return grad;
}

inline std::vector<double> init_vector(InitStrategy strategy, std::size_t channels, std::uint64_t seed) {
    require(channels >= 1, "init_vector: C must be >= 1");
    std::vector<double> v(channels, 0.0);
    std::mt19937_64 rng(seed);
    switch (strategy) {
        case InitStrategy::zeros:
            break;
        case InitStrategy::ones:
            std::fill(v.begin(), v.end(), 1.0);
            break;
        case InitStrategy::uniform01: {
            std::uniform_real_distribution<double> dist(0.0, 1.0);
            for (auto& x : v) x = dist(rng);
            break;
        }
        case InitStrategy::normal: {
            std::normal_distribution<double> dist(0.0, 1.0);
            for (auto& x : v) x = dist(rng);
            break;
        }
    }
    return v;
}

// AdamW with decoupled weight decay, PyTorch update order.
class AdamW {
public:
    AdamW(std::size_t n, double lr, AdamWParams params) : lr_(lr), p_(params), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> theta, std::span<const double> grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            theta[i] *= 1.0 - lr_ * p_.weight_decay;
            m_[i] = p_.beta1 * m_[i] + (1.0 - p_.beta1) * grad[i];
            v_[i] = p_.beta2 * v_[i] + (1.0 - p_.beta2) * grad[i] * grad[i];
            const double m_hat = m_[i] / bc1;
            const double v_hat = v_[i] / bc2;
            theta[i] -= lr_ * m_hat / (std::sqrt(v_hat) + p_.epsilon);
        }
    }

private:
    double lr_;
    AdamWParams p_;
    std::vector<double> m_;
    std::vector<double> v_;
    long t_ = 0;
};

inline std::vector<float> to_float_vector(std::span<const double> v) {
    return {v.begin(), v.end()};
}

// Optimizes one sample already at optimization resolution. The returned
// vector is float32; loss and IoU are computed from that rounded vector so
// they agree with any later evaluation of the stored LoCE.
inline LoCE optimize_prepared(const PreparedSample& sample, const OptimizerConfig& cfg) {
    cfg.validate();
    if (sample.act.grid() != sample.mask.grid()) {
        throw ArgumentError("optimize: activation and mask grids differ");
    }
    LoCE out;
    out.layer_id = sample.act.layer_id;
    auto theta = init_vector(cfg.init_strategy, sample.act.channels, cfg.seed);
    if (!sample.mask.empty_foreground()) {
        AdamW opt(theta.size(), cfg.learning_rate, cfg.adam);
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            auto grad = loss_gradient(std::span<const double>(theta), sample.act, sample.mask);
            opt.step(theta, grad);
        }
    }
    out.vector = to_float_vector(theta);
    const auto p = project(out.vector, sample.act);
    out.final_loss = loss(p, sample.mask);
    out.train_iou = sample.mask.empty_foreground() ? 0.0 : iou(binarize(p), sample.mask);
    out.failed = out.train_iou == 0.0;
    return out;
}

inline LoCE optimize_loce(const ActivationTensor& act, const ConceptMask& mask, const OptimizerConfig& cfg) {
    cfg.validate();
    return optimize_prepared(prepare_sample(act, mask, cfg.resolution), cfg);
}

// Seed used for the i-th record of a bank run; keeps random inits distinct
// per sample but reproducible.
inline std::uint64_t sample_seed(std::uint64_t base, std::size_t index) {
    return base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
}

inline ConceptBank optimize_bank(const Container& container, const std::string& layer_id, const OptimizerConfig& cfg,
                                 unsigned threads = 1) {
    cfg.validate();
    const auto& layer = container.layer(layer_id);
    const auto records = container.records_for_layer(layer_id);
    std::vector<LoCE> results(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
        OptimizerConfig local = cfg;
        local.seed = sample_seed(cfg.seed, i);
        const auto act = load_activation(container, records[i]);
        const auto mask = load_mask(container, records[i]);
        results[i] = optimize_loce(act, mask, local);
    });
    ConceptBank bank(layer_id, layer.channels);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        BankRecord rec{r.sample_id, r.concept_label, r.layer_id, results[i].final_loss, results[i].train_iou,
                       results[i].failed};
        bank.append(std::move(rec), results[i].vector);
    }
    return bank;
}

}  // namespace loce
