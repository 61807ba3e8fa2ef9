#pragma once

// Shared math substrate: activation/mask containers, bilinear rescaling,
// projection through a concept vector, binarization, IoU, and the
// token-sequence to spatial-grid rearrangement used for transformer layers.

#include <string>
#include <type_traits>
#include <vector>

#include "loce/common.hpp"

namespace loce {

struct GridSize {
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t area() const noexcept { return height * width; }
    friend bool operator==(const GridSize&, const GridSize&) = default;
};

// One sample's layer activations, C x H x W, channel-major.
struct ActivationTensor {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;
    std::string layer_id;

    ActivationTensor() = default;
    ActivationTensor(std::size_t c, std::size_t h, std::size_t w, std::string layer = {})
        : channels(c), height(h), width(w), data(c * h * w, 0.0f), layer_id(std::move(layer)) {}
    ActivationTensor(std::size_t c, std::size_t h, std::size_t w, std::vector<float> values, std::string layer = {})
        : channels(c), height(h), width(w), data(std::move(values)), layer_id(std::move(layer)) {
        require(data.size() == c * h * w, "activation payload does not match C*H*W");
    }

    GridSize grid() const noexcept { return {height, width}; }
    std::size_t plane() const noexcept { return height * width; }

    float& at(std::size_t k, std::size_t i, std::size_t j) { return data[(k * height + i) * width + j]; }
    float at(std::size_t k, std::size_t i, std::size_t j) const { return data[(k * height + i) * width + j]; }

    std::span<float> channel(std::size_t k) { return {data.data() + k * plane(), plane()}; }
    std::span<const float> channel(std::size_t k) const { return {data.data() + k * plane(), plane()}; }
};

// Binary foreground mask, h x w, values in {0,1}.
class ConceptMask {
public:
    ConceptMask() = default;
    ConceptMask(std::size_t h, std::size_t w) : height_(h), width_(w), data_(h * w, 0) {}
    ConceptMask(std::size_t h, std::size_t w, std::vector<std::uint8_t> values)
        : height_(h), width_(w), data_(std::move(values)) {
        require(data_.size() == h * w, "mask payload does not match h*w");
        for (auto& v : data_) {
            if (v > 1) {
                throw DataError("mask entries must be 0 or 1");
            }
        }
        recount();
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    GridSize grid() const noexcept { return {height_, width_}; }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t foreground_count() const noexcept { return foreground_; }
    bool empty_foreground() const noexcept { return foreground_ == 0; }

    std::uint8_t operator()(std::size_t i, std::size_t j) const { return data_[i * width_ + j]; }
    std::uint8_t operator[](std::size_t idx) const { return data_[idx]; }

    void set(std::size_t i, std::size_t j, bool on) {
        auto& cell = data_[i * width_ + j];
        if (cell != static_cast<std::uint8_t>(on)) {
            foreground_ += on ? 1 : -1;
            cell = static_cast<std::uint8_t>(on);
        }
    }

    const std::vector<std::uint8_t>& data() const noexcept { return data_; }

    friend bool operator==(const ConceptMask& a, const ConceptMask& b) {
        return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
    }

private:
    void recount() {
        foreground_ = 0;
        for (auto v : data_) {
            foreground_ += v;
        }
    }

    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::uint8_t> data_;
    std::size_t foreground_ = 0;
};

// Pre-sigmoid logits of a concept projection, h x w.
struct ProjectionMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    double operator()(std::size_t i, std::size_t j) const { return data[i * width + j]; }
};

namespace detail {

// Corner-aligned source coordinate for output index `i` of `out` samples
// over an input axis of length `in`.
inline void bilinear_axis(std::size_t in, std::size_t out, std::vector<std::size_t>& lo,
                          std::vector<std::size_t>& hi, std::vector<double>& frac) {
    lo.resize(out);
    hi.resize(out);
    frac.resize(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = out > 1 ? static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
        auto l = static_cast<std::size_t>(std::floor(src));
        if (l >= in - 1) {
            l = in - 1;
        }
        lo[i] = l;
        hi[i] = std::min(l + 1, in - 1);
        frac[i] = src - static_cast<double>(l);
    }
}

// Bilinear resampling of one h x w plane into out_h x out_w, returned as doubles.
template <typename T>
std::vector<double> resample_plane(std::span<const T> plane, GridSize from, GridSize to) {
    std::vector<std::size_t> y0, y1, x0, x1;
    std::vector<double> fy, fx;
    bilinear_axis(from.height, to.height, y0, y1, fy);
    bilinear_axis(from.width, to.width, x0, x1, fx);
    std::vector<double> out(to.area());
    for (std::size_t i = 0; i < to.height; ++i) {
        for (std::size_t j = 0; j < to.width; ++j) {
            const double a = plane[y0[i] * from.width + x0[j]];
            const double b = plane[y0[i] * from.width + x1[j]];
            const double c = plane[y1[i] * from.width + x0[j]];
            const double d = plane[y1[i] * from.width + x1[j]];
            const double top = a + (b - a) * fx[j];
            const double bottom = c + (d - c) * fx[j];
            out[i * to.width + j] = top + (bottom - top) * fy[i];
        }
    }
    return out;
}

}  // namespace detail

inline ActivationTensor rescale_activation(const ActivationTensor& act, GridSize target) {
    require(target.height >= 1 && target.width >= 1, "rescale target dims must be >= 1");
    if (target == act.grid()) {
        return act;
    }
    ActivationTensor out(act.channels, target.height, target.width, act.layer_id);
    for (std::size_t k = 0; k < act.channels; ++k) {
        auto plane = detail::resample_plane<float>(act.channel(k), act.grid(), target);
        auto dst = out.channel(k);
        for (std::size_t p = 0; p < plane.size(); ++p) {
            dst[p] = static_cast<float>(plane[p]);
        }
    }
    return out;
}

// Bilinear interpolation of the {0,1} field followed by a >= 0.5 threshold.
inline ConceptMask rescale_mask(const ConceptMask& mask, GridSize target) {
    require(target.height >= 1 && target.width >= 1, "rescale target dims must be >= 1");
    if (target == mask.grid()) {
        return mask;
    }
    auto field = detail::resample_plane<std::uint8_t>(std::span<const std::uint8_t>(mask.data()), mask.grid(), target);
    std::vector<std::uint8_t> bits(field.size());
    for (std::size_t p = 0; p < field.size(); ++p) {
        bits[p] = field[p] >= 0.5 ? 1 : 0;
    }
    return ConceptMask(target.height, target.width, std::move(bits));
}

template <typename T>
ProjectionMask project(std::span<const T> v, const ActivationTensor& act) {
    if (v.size() != act.channels) {
        throw ArgumentError("projection vector length " + std::to_string(v.size()) + " does not match " +
                            std::to_string(act.channels) + " channels");
    }
    ProjectionMask p{act.height, act.width, std::vector<double>(act.plane(), 0.0)};
    for (std::size_t k = 0; k < act.channels; ++k) {
        const double w = static_cast<double>(v[k]);
        if (w == 0.0) {
            continue;
        }
        auto ch = act.channel(k);
        for (std::size_t q = 0; q < ch.size(); ++q) {
            p.data[q] += w * static_cast<double>(ch[q]);
        }
    }
    return p;
}

template <typename T>
ProjectionMask project(const std::vector<T>& v, const ActivationTensor& act) {
    return project(std::span<const T>(v), act);
}

template <typename T>
    requires(!std::is_const_v<T>)
ProjectionMask project(std::span<T> v, const ActivationTensor& act) {
    return project(std::span<const T>(v), act);
}

// sigmoid(P) > 1/2 is equivalent to P > 0; exact zeros go to background.
inline ConceptMask binarize(const ProjectionMask& p) {
    std::vector<std::uint8_t> bits(p.data.size());
    for (std::size_t q = 0; q < bits.size(); ++q) {
        bits[q] = p.data[q] > 0.0 ? 1 : 0;
    }
    return ConceptMask(p.height, p.width, std::move(bits));
}

// Intersection over union; 0.0 when both masks are empty.
inline double iou(const ConceptMask& a, const ConceptMask& b) {
    if (a.grid() != b.grid()) {
        throw ArgumentError("iou: mask dimensions differ");
    }
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t q = 0; q < a.size(); ++q) {
        inter += a[q] & b[q];
        uni += a[q] | b[q];
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Drops `n_prefix_tokens` leading rows of a T x C token matrix and lays the
// remaining H*W tokens out row-major as a C x H x W tensor.
inline ActivationTensor tokens_to_quasi_activations(const MatrixF& tokens, GridSize grid, std::size_t n_prefix_tokens,
                                                    std::string layer_id = {}) {
    if (tokens.rows() != n_prefix_tokens + grid.area()) {
        throw ArgumentError("token count " + std::to_string(tokens.rows()) + " != " +
                            std::to_string(n_prefix_tokens) + " prefix + " + std::to_string(grid.area()) +
                            " grid tokens");
    }
    ActivationTensor out(tokens.cols(), grid.height, grid.width, std::move(layer_id));
    for (std::size_t t = 0; t < grid.area(); ++t) {
        auto token = tokens.row(n_prefix_tokens + t);
        for (std::size_t k = 0; k < tokens.cols(); ++k) {
            out.data[k * grid.area() + t] = token[k];
        }
    }
    return out;
}

// Inverse of the spatial rearrangement: HW x C tokens in row-major grid order.
inline MatrixF flatten_to_tokens(const ActivationTensor& act) {
    MatrixF tokens(act.plane(), act.channels);
    for (std::size_t t = 0; t < act.plane(); ++t) {
        for (std::size_t k = 0; k < act.channels; ++k) {
            tokens(t, k) = act.data[k * act.plane() + t];
        }
    }
    return tokens;
}

}  // namespace loce
