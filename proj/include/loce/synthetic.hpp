#pragma once

// Synthetic activation/mask generators with known structure. They back the
// test suites, the acceptance checks and the `synth` CLI command.

#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "loce/optimizer.hpp"
#include "loce/tensor_store.hpp"

namespace loce::synthetic {

// Random axis-aligned ellipse covering roughly `min_frac`..`max_frac` of the grid.
inline ConceptMask random_ellipse(GridSize grid, std::mt19937_64& rng, double min_frac = 0.1, double max_frac = 0.35) {
    std::uniform_real_distribution<double> frac(min_frac, max_frac);
    std::uniform_real_distribution<double> aspect(0.6, 1.6);
    const double area = frac(rng) * static_cast<double>(grid.area());
    const double ratio = aspect(rng);
    const double ry = std::sqrt(area / (std::numbers::pi * ratio));
    const double rx = ry * ratio;
    std::uniform_real_distribution<double> cy(ry, std::max(ry, grid.height - ry));
    std::uniform_real_distribution<double> cx(rx, std::max(rx, grid.width - rx));
    const double y0 = cy(rng);
    const double x0 = cx(rng);
    ConceptMask mask(grid.height, grid.width);
    for (std::size_t i = 0; i < grid.height; ++i) {
        for (std::size_t j = 0; j < grid.width; ++j) {
            const double dy = (static_cast<double>(i) + 0.5 - y0) / ry;
            const double dx = (static_cast<double>(j) + 0.5 - x0) / rx;
            if (dy * dy + dx * dx <= 1.0) mask.set(i, j, true);
        }
    }
    return mask;
}

// Channel 0 is the signal (foreground in [0.6, 1], background in [0, 0.4], so
// mask == channel0 > 0.5), channel 1 is constant 1, the rest is N(0, 0.5) noise.
inline PreparedSample separable_sample(std::uint64_t seed, GridSize grid = {100, 100}, std::size_t noise_channels = 16) {
    std::mt19937_64 rng(seed);
    auto mask = random_ellipse(grid, rng);
    ActivationTensor act(2 + noise_channels, grid.height, grid.width, "synthetic");
    std::uniform_real_distribution<float> hi(0.6f, 1.0f), lo(0.0f, 0.4f);
    std::normal_distribution<float> noise(0.0f, 0.5f);
    for (std::size_t q = 0; q < grid.area(); ++q) {
        act.data[q] = mask[q] ? hi(rng) : lo(rng);
        act.data[grid.area() + q] = 1.0f;
    }
    for (std::size_t k = 2; k < act.channels; ++k) {
        for (auto& v : act.channel(k)) v = noise(rng);
    }
    return {std::move(act), std::move(mask)};
}

// Two-subconcept family.
//
// Layout: channel 0 constant 1; channel 1 a weak shared cue; channel 2 + g the
// strong cue of subconcept g (g < groups); then `context_channels` per-sample
// context channels and `noise_channels` noise channels.
//
// In a subconcept-g sample, every other cue channel carries `cross_level`
// times the inverted foreground (anti-correlated when > 0). One
// randomly chosen context channel marks a background distractor region in
// which the strong cue is also high, so a vector must subtract that context
// channel to keep the distractor out of the prediction.
struct SubconceptParams {
    GridSize grid{100, 100};
    std::size_t groups = 2;
    std::size_t context_channels = 6;
    std::size_t noise_channels = 8;
    double shared_cue_gap = 0.15;   // fg/bg mean gap of the shared cue
    double cross_level = 0.1;       // anti-correlation strength of the other cue
    double distractor_prob = 0.7;   // chance a sample has a distractor region
    double noise_sigma = 0.3;
};

inline std::size_t subconcept_channels(const SubconceptParams& p) { return 2 + p.groups + p.context_channels + p.noise_channels; }

inline PreparedSample subconcept_sample(std::size_t group, std::uint64_t seed, const SubconceptParams& p = {}) {
    require(group < p.groups, "subconcept_sample: group out of range");
    require(p.context_channels >= 1, "subconcept_sample: need at least one context channel");
    std::mt19937_64 rng(seed);
    const GridSize grid = p.grid;
    auto mask = random_ellipse(grid, rng, 0.1, 0.3);
    ConceptMask distractor(grid.height, grid.width);
    if (std::bernoulli_distribution(p.distractor_prob)(rng)) {
        // Keep drawing until the region sits mostly in the background.
        for (int attempt = 0; attempt < 20; ++attempt) {
            auto d = random_ellipse(grid, rng, 0.05, 0.15);
            std::size_t overlap = 0;
            for (std::size_t q = 0; q < grid.area(); ++q) overlap += d[q] & mask[q];
            if (overlap == 0) {
                distractor = std::move(d);
                break;
            }
        }
    }
    std::uniform_int_distribution<std::size_t> pick_ctx(0, p.context_channels - 1);
    const std::size_t ctx_begin = 2 + p.groups;
    const std::size_t ctx = ctx_begin + pick_ctx(rng);

    ActivationTensor act(subconcept_channels(p), grid.height, grid.width, "synthetic");
    std::uniform_real_distribution<float> hi(0.6f, 1.0f), lo(0.0f, 0.4f), low_noise(0.0f, 0.2f);
    std::normal_distribution<double> shared_noise(0.0, 0.2), noise(0.0, p.noise_sigma);
    const std::size_t own = 2 + group;
    for (std::size_t q = 0; q < grid.area(); ++q) {
        const bool fg = mask[q];
        const bool dis = distractor[q];
        act.channel(0)[q] = 1.0f;
        act.channel(1)[q] = static_cast<float>((fg ? 0.5 + p.shared_cue_gap / 2 : 0.5 - p.shared_cue_gap / 2) +
                                               shared_noise(rng));
        for (std::size_t g = 0; g < p.groups; ++g) {
            if (g == group) {
                act.channel(own)[q] = fg || dis ? hi(rng) : lo(rng);
            } else {
                act.channel(2 + g)[q] = static_cast<float>(low_noise(rng) + p.cross_level * (fg ? 0.0 : 0.6));
            }
        }
        for (std::size_t k = ctx_begin; k < ctx_begin + p.context_channels; ++k) {
            act.channel(k)[q] = k == ctx && dis ? hi(rng) : low_noise(rng);
        }
        for (std::size_t k = ctx_begin + p.context_channels; k < act.channels; ++k) {
            act.channel(k)[q] = static_cast<float>(noise(rng));
        }
    }
    return {std::move(act), std::move(mask)};
}

// A single sample whose only foreground pixel disappears when rescaled to
// 100 x 100: a guaranteed optimization failure.
inline std::pair<ActivationTensor, ConceptMask> vanishing_mask_sample(std::uint64_t seed, std::size_t channels,
                                                                      GridSize act_grid, GridSize image) {
    std::mt19937_64 rng(seed);
    ActivationTensor act(channels, act_grid.height, act_grid.width, "synthetic");
    std::normal_distribution<float> noise(0.0f, 1.0f);
    for (auto& v : act.data) v = noise(rng);
    ConceptMask mask(image.height, image.width);
    mask.set(1, 1, true);
    return {std::move(act), std::move(mask)};
}

// Downsamples a prepared sample's activations to `act_grid` (nearest cell
// centre) so containers exercise the rescale path.
inline ActivationTensor downsample_nearest(const ActivationTensor& act, GridSize target) {
    ActivationTensor out(act.channels, target.height, target.width, act.layer_id);
    for (std::size_t k = 0; k < act.channels; ++k) {
        for (std::size_t i = 0; i < target.height; ++i) {
            const std::size_t si = (2 * i + 1) * act.height / (2 * target.height);
            for (std::size_t j = 0; j < target.width; ++j) {
                const std::size_t sj = (2 * j + 1) * act.width / (2 * target.width);
                out.at(k, i, j) = act.at(k, si, sj);
            }
        }
    }
    return out;
}

struct ContainerSpec {
    std::uint64_t seed = 7;
    std::size_t samples_per_group = 6;
    bool include_failure = true;
    bool include_token_layer = true;
};

// Two concepts ("car" with two subconcepts, "bus" with its own cue), activations at
// 25 x 25, masks at 100 x 100, optionally a transformer-style token layer and
// one sample whose mask vanishes on rescale.
inline Container write_demo_container(const fs::path& root, const ContainerSpec& spec = {}) {
    SubconceptParams params;
    params.groups = 3;
    const std::size_t channels = subconcept_channels(params);
    const GridSize act_grid{25, 25};
    ContainerWriter writer(root);
    writer.add_layer({"features.synthetic", LayerKind::activation, channels, act_grid.height, act_grid.width, 0});
    if (spec.include_token_layer) {
        writer.add_layer({"encoder.tokens", LayerKind::tokens, channels, act_grid.height, act_grid.width, 1});
    }
    std::uint64_t counter = 0;
    auto add = [&](const std::string& label, std::size_t group, const std::string& id) {
        const auto s = subconcept_sample(group, spec.seed * 1000 + counter++, params);
        const auto small = downsample_nearest(s.act, act_grid);
        writer.add_sample({id, label, "features.synthetic", {}, {}, {}}, small, s.mask);
        if (spec.include_token_layer) {
            MatrixF tokens(1 + act_grid.area(), channels, 0.0f);
            auto flat = flatten_to_tokens(small);
            for (std::size_t t = 0; t < flat.rows(); ++t) {
                std::copy(flat.row(t).begin(), flat.row(t).end(), tokens.row(t + 1).begin());
            }
            writer.add_token_sample({id, label, "encoder.tokens", {}, {}, {}}, tokens, s.mask);
        }
    };
    for (std::size_t i = 0; i < spec.samples_per_group; ++i) add("car", 0, "car_a_" + std::to_string(i));
    for (std::size_t i = 0; i < spec.samples_per_group; ++i) add("car", 1, "car_b_" + std::to_string(i));
    for (std::size_t i = 0; i < spec.samples_per_group; ++i) add("bus", 2, "bus_" + std::to_string(i));
    if (spec.include_failure) {
        auto [act, mask] = vanishing_mask_sample(spec.seed, channels, act_grid, {480, 640});
        writer.add_sample({"car_tiny", "car", "features.synthetic", {}, {}, {}}, act, mask);
    }
    writer.finish();
    return read_container(root);
}

}  // namespace loce::synthetic
