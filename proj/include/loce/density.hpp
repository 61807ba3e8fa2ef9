#pragma once

// 2D reduction of a concept-vector set and Gaussian mixture density modeling
// with BIC-based component selection.
//
// The built-in reduction is a PCA projection. For a UMAP (or any other)
// layout computed elsewhere, import it with load_external_embedding.

#include <Eigen/Dense>

#include <array>
#include <numbers>
#include <numeric>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "loce/common.hpp"
#include "loce/npy.hpp"

namespace loce {

enum class EmbeddingSource { pca, external };

inline const char* to_string(EmbeddingSource s) { return s == EmbeddingSource::pca ? "pca" : "external"; }

struct Embedding2D {
    MatrixD points;  // N x 2
    EmbeddingSource source = EmbeddingSource::pca;
    std::array<double, 2> explained_variance{0.0, 0.0};
};

template <typename T>
Embedding2D reduce_2d(const Matrix<T>& data) {
    const std::size_t n = data.rows();
    const std::size_t c = data.cols();
    if (n < 3) {
        throw ArgumentError("reduce_2d needs at least 3 rows");
    }
    Eigen::MatrixXd x(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
            const double v = static_cast<double>(data(i, k));
            if (!std::isfinite(v)) {
                throw ArgumentError("reduce_2d: non-finite input (filter failed rows first)");
            }
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
        }
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    if (x.cwiseAbs().maxCoeff() == 0.0) {
        throw ArgumentError("reduce_2d: data has rank 0 (all rows identical)");
    }

    const std::size_t n_comp = std::min<std::size_t>(2, c);
    Eigen::MatrixXd axes(c, n_comp);
    Eigen::VectorXd eigenvalues(n_comp);
    if (c <= n) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(x.transpose() * x);
        for (std::size_t j = 0; j < n_comp; ++j) {
            const auto idx = static_cast<Eigen::Index>(c - 1 - j);
            axes.col(static_cast<Eigen::Index>(j)) = solver.eigenvectors().col(idx);
            eigenvalues(static_cast<Eigen::Index>(j)) = std::max(0.0, solver.eigenvalues()(idx));
        }
    } else {
        // Fewer rows than dimensions: work on the Gram matrix instead.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(x * x.transpose());
        for (std::size_t j = 0; j < n_comp; ++j) {
            const auto idx = static_cast<Eigen::Index>(n - 1 - j);
            Eigen::VectorXd axis = x.transpose() * solver.eigenvectors().col(idx);
            const double norm = axis.norm();
            if (norm > 0.0) axis /= norm;
            axes.col(static_cast<Eigen::Index>(j)) = axis;
            eigenvalues(static_cast<Eigen::Index>(j)) = std::max(0.0, solver.eigenvalues()(idx));
        }
    }
    // Sign convention: the largest-magnitude loading of each axis is positive.
    for (Eigen::Index j = 0; j < axes.cols(); ++j) {
        Eigen::Index arg = 0;
        for (Eigen::Index k = 1; k < axes.rows(); ++k) {
            if (std::fabs(axes(k, j)) > std::fabs(axes(arg, j)) + 1e-12) arg = k;
        }
        if (axes(arg, j) < 0.0) axes.col(j) *= -1.0;
    }
    const Eigen::MatrixXd projected = x * axes;
    Embedding2D e;
    e.points = MatrixD(n, 2, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n_comp; ++j) {
            e.points(i, j) = projected(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    for (std::size_t j = 0; j < n_comp; ++j) {
        e.explained_variance[j] = eigenvalues(static_cast<Eigen::Index>(j)) / static_cast<double>(n - 1);
    }
    return e;
}

// Imports an N x 2 float array computed elsewhere; rows must align with the bank.
inline Embedding2D load_external_embedding(const std::filesystem::path& path, std::size_t expected_rows) {
    auto arr = npy::read<double>(path);
    if (arr.shape.size() != 2 || arr.shape[1] != 2) {
        throw DataError("external embedding must be an N x 2 array");
    }
    if (arr.shape[0] != expected_rows) {
        throw DataError("external embedding has " + std::to_string(arr.shape[0]) + " rows, bank has " +
                        std::to_string(expected_rows));
    }
    for (std::size_t i = 0; i < arr.shape[0]; ++i) {
        if (!std::isfinite(arr.data[2 * i]) || !std::isfinite(arr.data[2 * i + 1])) {
            throw DataError("external embedding row " + std::to_string(i) + " is not finite");
        }
    }
    Embedding2D e;
    e.points = MatrixD(arr.shape[0], 2, std::move(arr.data));
    e.source = EmbeddingSource::external;
    return e;
}

// ---------------------------------------------------------------------------
// Gaussian mixtures in the plane

struct Cov2 {
    double xx = 1.0, xy = 0.0, yy = 1.0;

    double det() const { return xx * yy - xy * xy; }
};

struct GmmOptions {
    double tolerance = 1e-6;       // relative change of the mean log-likelihood
    int max_iterations = 500;
    double regularization = 1e-6;  // added to covariance diagonals
};

struct GmmModel {
    std::vector<double> weights;
    std::vector<std::array<double, 2>> means;
    std::vector<Cov2> covariances;
    double log_likelihood = 0.0;  // total over the fitted points
    double bic = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> ll_history;  // mean log-likelihood per point, one per E-step

    std::size_t components() const noexcept { return weights.size(); }
};

inline std::size_t gmm_parameter_count(std::size_t k) { return (k - 1) + 2 * k + 3 * k; }

namespace detail {

inline double log_gaussian(const std::array<double, 2>& x, const std::array<double, 2>& mean, const Cov2& cov) {
    const double det = cov.det();
    const double dx = x[0] - mean[0];
    const double dy = x[1] - mean[1];
    const double maha = (cov.yy * dx * dx - 2.0 * cov.xy * dx * dy + cov.xx * dy * dy) / det;
    return -0.5 * maha - std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det);
}

// Per-point log densities log(w_k N(x|k)) for all k; returns log-likelihood.
inline double weighted_log_densities(const GmmModel& m, std::span<const double> point, std::vector<double>& out) {
    const std::array<double, 2> x{point[0], point[1]};
    out.resize(m.components());
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m.components(); ++k) {
        out[k] = m.weights[k] > 0.0 ? std::log(m.weights[k]) + log_gaussian(x, m.means[k], m.covariances[k])
                                    : -std::numeric_limits<double>::infinity();
        hi = std::max(hi, out[k]);
    }
    double sum = 0.0;
    for (double v : out) sum += std::exp(v - hi);
    return hi + std::log(sum);
}

inline Cov2 sample_covariance(const MatrixD& pts, std::span<const double> resp, std::array<double, 2> mean,
                              double total, double reg) {
    Cov2 c{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < pts.rows(); ++i) {
        const double dx = pts(i, 0) - mean[0];
        const double dy = pts(i, 1) - mean[1];
        c.xx += resp[i] * dx * dx;
        c.xy += resp[i] * dx * dy;
        c.yy += resp[i] * dy * dy;
    }
    c.xx = c.xx / total + reg;
    c.xy = c.xy / total;
    c.yy = c.yy / total + reg;
    return c;
}

// k-means++ seeding followed by one hard assignment to initialize the mixture.
inline GmmModel init_gmm(const MatrixD& pts, std::size_t k, std::uint64_t seed, double reg) {
    const std::size_t n = pts.rows();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> centers;
    centers.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    std::vector<double> d2(n);
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (auto c : centers) best = std::min(best, squared_distance(pts.row(i), pts.row(c)));
            d2[i] = best;
            total += best;
        }
        std::size_t pick;
        if (total <= 0.0) {
            pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        } else {
            double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                r -= d2[i];
                if (r < 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        centers.push_back(pick);
    }

    GmmModel m;
    std::vector<std::vector<double>> resp(k, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
            const double d = squared_distance(pts.row(i), pts.row(centers[j]));
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        resp[arg][i] = 1.0;
    }
    std::array<double, 2> global_mean{0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
        global_mean[0] += pts(i, 0) / static_cast<double>(n);
        global_mean[1] += pts(i, 1) / static_cast<double>(n);
    }
    std::vector<double> ones(n, 1.0);
    const Cov2 global_cov = sample_covariance(pts, ones, global_mean, static_cast<double>(n), reg);
    for (std::size_t j = 0; j < k; ++j) {
        double nk = std::accumulate(resp[j].begin(), resp[j].end(), 0.0);
        std::array<double, 2> mean{pts(centers[j], 0), pts(centers[j], 1)};
        Cov2 cov = global_cov;
        if (nk > 0.0) {
            mean = {0.0, 0.0};
            for (std::size_t i = 0; i < n; ++i) {
                mean[0] += resp[j][i] * pts(i, 0) / nk;
                mean[1] += resp[j][i] * pts(i, 1) / nk;
            }
            cov = sample_covariance(pts, resp[j], mean, nk, reg);
        }
        m.weights.push_back(std::max(nk, 1.0) / static_cast<double>(n));
        m.means.push_back(mean);
        m.covariances.push_back(cov);
    }
    const double wsum = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
    for (auto& w : m.weights) w /= wsum;
    return m;
}

}  // namespace detail

// EM fit of a K-component full-covariance mixture.
inline GmmModel gmm_fit(const MatrixD& points, std::size_t k, std::uint64_t seed, const GmmOptions& opts = {}) {
    require(points.cols() == 2, "gmm_fit expects N x 2 points");
    require(k >= 1, "gmm_fit: K must be >= 1");
    require(points.rows() >= k, "gmm_fit: need at least K points");
    const std::size_t n = points.rows();
    GmmModel m = detail::init_gmm(points, k, seed, opts.regularization);

    std::vector<std::vector<double>> resp(k, std::vector<double>(n));
    std::vector<double> logd;
    double prev = -std::numeric_limits<double>::infinity();
    GmmModel last = m;
    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        // E-step
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ll = detail::weighted_log_densities(m, points.row(i), logd);
            total += ll;
            for (std::size_t j = 0; j < k; ++j) resp[j][i] = std::exp(logd[j] - ll);
        }
        const double mean_ll = total / static_cast<double>(n);
        if (mean_ll < prev) {
            // Only the variance floor on a collapsing component can get here;
            // keep the better parameters and stop.
            std::swap(m, last);
            m.converged = true;
            break;
        }
        m.ll_history.push_back(mean_ll);
        m.log_likelihood = total;
        m.iterations = iter;
        if (iter > 0 && std::fabs(mean_ll - prev) <= opts.tolerance * std::max(std::fabs(prev), 1e-12)) {
            m.converged = true;
            break;
        }
        prev = mean_ll;
        last = m;

        // M-step
        for (std::size_t j = 0; j < k; ++j) {
            const double nk = std::accumulate(resp[j].begin(), resp[j].end(), 0.0);
            if (nk < 1e-10) {
                // Collapsed component: drop its weight, keep its shape.
                m.weights[j] = 0.0;
                continue;
            }
            std::array<double, 2> mean{0.0, 0.0};
            for (std::size_t i = 0; i < n; ++i) {
                mean[0] += resp[j][i] * points(i, 0);
                mean[1] += resp[j][i] * points(i, 1);
            }
            mean[0] /= nk;
            mean[1] /= nk;
            m.means[j] = mean;
            m.covariances[j] = detail::sample_covariance(points, resp[j], mean, nk, opts.regularization);
            m.weights[j] = nk / static_cast<double>(n);
        }
        const double wsum = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
        for (auto& w : m.weights) w /= wsum;
    }
    m.bic = -2.0 * m.log_likelihood + static_cast<double>(gmm_parameter_count(k)) * std::log(static_cast<double>(n));
    return m;
}

// Posterior component probabilities, N x K.
inline MatrixD responsibilities(const GmmModel& model, const MatrixD& points) {
    MatrixD out(points.rows(), model.components());
    std::vector<double> logd;
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const double ll = detail::weighted_log_densities(model, points.row(i), logd);
        for (std::size_t j = 0; j < model.components(); ++j) out(i, j) = std::exp(logd[j] - ll);
    }
    return out;
}

inline std::vector<std::size_t> dominant_components(const MatrixD& resp) {
    std::vector<std::size_t> out(resp.rows());
    for (std::size_t i = 0; i < resp.rows(); ++i) {
        auto row = resp.row(i);
        out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

struct BicEntry {
    std::size_t k = 0;
    double bic = 0.0;
    double log_likelihood = 0.0;
};

struct GmmSelection {
    GmmModel best;
    std::vector<BicEntry> sweep;
};

// Fits K = k_min..min(k_max, N) and keeps the lowest BIC; ties go to smaller K.
inline GmmSelection select_gmm(const MatrixD& points, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                               const GmmOptions& opts = {}) {
    require(k_min >= 1 && k_min <= k_max, "select_gmm: invalid component range");
    require(points.rows() >= k_min, "select_gmm: fewer points than the smallest K");
    const std::size_t upper = std::min(k_max, points.rows());
    GmmSelection sel;
    bool have = false;
    for (std::size_t k = k_min; k <= upper; ++k) {
        GmmModel m = gmm_fit(points, k, seed + k, opts);
        sel.sweep.push_back({k, m.bic, m.log_likelihood});
        if (!have || m.bic < sel.best.bic) {
            sel.best = std::move(m);
            have = true;
        }
    }
    return sel;
}

}  // namespace loce
