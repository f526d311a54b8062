#pragma once

// Diagonal-covariance Gaussian mixtures fitted by EM, plus the optional
// PCA-style linear reducer applied before fitting.

#include "d2af/core.hpp"
#include "d2af/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace d2af {

/// Samples are rows.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MixtureModel {
    int components = 0;
    int dim = 0;
    std::vector<double> weights;
    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> variances; // diagonal covariance per component
    double variance_floor = 1e-6;

    friend bool operator==(const MixtureModel&, const MixtureModel&) = default;
};

/// Weights sum to one, are non-negative, and every variance respects the floor.
inline void validate(const MixtureModel& m) {
    if (m.components < 1 || m.dim < 1) throw InvalidInput("mixture needs K >= 1 and dim >= 1");
    if (int(m.weights.size()) != m.components || int(m.means.size()) != m.components ||
        int(m.variances.size()) != m.components)
        throw InvalidInput("mixture parameter count does not match K");
    double sum = 0.0;
    for (int k = 0; k < m.components; ++k) {
        if (!(m.weights[std::size_t(k)] >= 0.0)) throw InvalidInput("negative mixture weight");
        sum += m.weights[std::size_t(k)];
        if (int(m.means[std::size_t(k)].size()) != m.dim || int(m.variances[std::size_t(k)].size()) != m.dim)
            throw InvalidInput("mixture component has wrong dimension");
        for (double v : m.variances[std::size_t(k)])
            if (!(v >= m.variance_floor) || !std::isfinite(v)) throw InvalidInput("variance below floor");
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("mixture weights do not sum to 1");
}

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

/// log pi_k - 0.5 * sum_j log(2 pi var_kj), precomputed per component.
inline std::vector<double> component_constants(const MixtureModel& m) {
    std::vector<double> c(std::size_t(m.components));
    for (int k = 0; k < m.components; ++k) {
        const double w = m.weights[std::size_t(k)];
        double s = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
        for (double v : m.variances[std::size_t(k)]) s -= 0.5 * std::log(2.0 * std::numbers::pi * v);
        c[std::size_t(k)] = s;
    }
    return c;
}

inline void component_log_terms(const MixtureModel& m, const std::vector<double>& consts, const double* x,
                                std::span<double> out) {
    for (int k = 0; k < m.components; ++k) {
        if (!std::isfinite(consts[std::size_t(k)])) {
            out[std::size_t(k)] = -std::numeric_limits<double>::infinity();
            continue;
        }
        const auto& mu = m.means[std::size_t(k)];
        const auto& var = m.variances[std::size_t(k)];
        double q = 0.0;
        for (int j = 0; j < m.dim; ++j) {
            const double d = x[j] - mu[std::size_t(j)];
            q += d * d / var[std::size_t(j)];
        }
        out[std::size_t(k)] = consts[std::size_t(k)] - 0.5 * q;
    }
}

} // namespace detail

/// log sum_k pi_k N(f | mu_k, diag(var_k)), via log-sum-exp.
inline double log_density(const MixtureModel& m, std::span<const double> f) {
    if (int(f.size()) != m.dim)
        throw InvalidInput("feature dimension " + std::to_string(f.size()) + " does not match model dimension " +
                           std::to_string(m.dim));
    const auto consts = detail::component_constants(m);
    std::vector<double> terms(std::size_t(m.components));
    detail::component_log_terms(m, consts, f.data(), terms);
    return detail::log_sum_exp(terms);
}

struct EmOptions {
    int components = 16;
    double variance_floor = 1e-6;
    double tol = 1e-6; // relative change in total log-likelihood
    int max_iters = 200;
    std::uint64_t seed = 0;
};

struct FitResult {
    MixtureModel model;
    std::vector<double> log_likelihood; // total training log-likelihood per iteration
    int iterations = 0;
    bool converged = false;
};

namespace detail {

/// k-means++ seeding followed by one hard assignment. Once every point
/// coincides with a chosen center the remaining components get zero weight.
inline MixtureModel kmeanspp_init(const Matrix& x, const EmOptions& opt) {
    const Eigen::Index n = x.rows(), d = x.cols();
    const int K = opt.components;
    Rng rng(opt.seed);

    std::vector<Eigen::Index> centers;
    centers.push_back(Eigen::Index(rng.below(std::uint64_t(n))));
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d2[std::size_t(i)] = (x.row(i) - x.row(centers[0])).squaredNorm();
    while (int(centers.size()) < K) {
        double total = 0.0;
        for (double v : d2) total += v;
        if (!(total > 0.0)) break;
        const double target = rng.uniform() * total;
        double acc = 0.0;
        Eigen::Index chosen = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            acc += d2[std::size_t(i)];
            if (acc > target && d2[std::size_t(i)] > 0.0) {
                chosen = i;
                break;
            }
        }
        if (d2[std::size_t(chosen)] <= 0.0) {
            // rounding pushed us to the tail; take the last point with positive distance
            for (Eigen::Index i = n - 1; i >= 0; --i)
                if (d2[std::size_t(i)] > 0.0) {
                    chosen = i;
                    break;
                }
        }
        centers.push_back(chosen);
        for (Eigen::Index i = 0; i < n; ++i)
            d2[std::size_t(i)] = std::min(d2[std::size_t(i)], (x.row(i) - x.row(chosen)).squaredNorm());
    }

    const int active = int(centers.size());
    std::vector<int> assign(static_cast<std::size_t>(n));
    std::vector<double> count(std::size_t(K), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < active; ++k) {
            const double dd = (x.row(i) - x.row(centers[std::size_t(k)])).squaredNorm();
            if (dd < best_d) best_d = dd, best = k;
        }
        assign[std::size_t(i)] = best;
        count[std::size_t(best)] += 1.0;
    }

    // global moments for sparse clusters
    Eigen::RowVectorXd gmean = x.colwise().mean();
    Eigen::RowVectorXd gvar = ((x.rowwise() - gmean).array().square().colwise().sum() / double(n)).matrix();

    MixtureModel m;
    m.components = K;
    m.dim = int(d);
    m.variance_floor = opt.variance_floor;
    m.weights.assign(std::size_t(K), 0.0);
    m.means.assign(std::size_t(K), std::vector<double>(std::size_t(d), 0.0));
    m.variances.assign(std::size_t(K), std::vector<double>(std::size_t(d), 0.0));
    for (Eigen::Index i = 0; i < n; ++i) {
        auto& mu = m.means[std::size_t(assign[std::size_t(i)])];
        for (Eigen::Index j = 0; j < d; ++j) mu[std::size_t(j)] += x(i, j);
    }
    for (int k = 0; k < K; ++k) {
        auto& mu = m.means[std::size_t(k)];
        if (count[std::size_t(k)] > 0) {
            for (double& v : mu) v /= count[std::size_t(k)];
        } else {
            for (Eigen::Index j = 0; j < d; ++j) mu[std::size_t(j)] = x(centers[0], j);
        }
        m.weights[std::size_t(k)] = count[std::size_t(k)] / double(n);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const int k = assign[std::size_t(i)];
        for (Eigen::Index j = 0; j < d; ++j) {
            const double diff = x(i, j) - m.means[std::size_t(k)][std::size_t(j)];
            m.variances[std::size_t(k)][std::size_t(j)] += diff * diff;
        }
    }
    for (int k = 0; k < K; ++k)
        for (Eigen::Index j = 0; j < d; ++j) {
            double& v = m.variances[std::size_t(k)][std::size_t(j)];
            v = count[std::size_t(k)] >= 2 ? v / count[std::size_t(k)] : gvar(j);
            v = std::max(v, opt.variance_floor);
        }
    return m;
}

} // namespace detail

/// EM for a diagonal Gaussian mixture. The recorded log-likelihood is
/// non-decreasing: the floored variance update is the constrained maximizer
/// of each coordinate's expected log-likelihood.
inline FitResult fit_gmm(const Matrix& x, const EmOptions& opt) {
    const Eigen::Index n = x.rows(), d = x.cols();
    if (opt.components < 1) throw InvalidInput("K must be >= 1");
    if (d < 1) throw InvalidInput("reference matrix has no columns");
    if (n < opt.components)
        throw InvalidInput("need at least K samples: n = " + std::to_string(n) + ", K = " + std::to_string(opt.components));
    if (!x.allFinite()) throw InvalidInput("reference matrix contains non-finite entries");
    if (!(opt.variance_floor > 0.0)) throw InvalidInput("variance floor must be positive");

    FitResult res;
    res.model = detail::kmeanspp_init(x, opt);
    MixtureModel& m = res.model;
    const int K = m.components;

    std::vector<double> resp(std::size_t(n) * std::size_t(K));
    std::vector<double> terms(static_cast<std::size_t>(K));
    for (int iter = 0; iter < std::max(opt.max_iters, 1); ++iter) {
        // E-step
        const auto consts = detail::component_constants(m);
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            detail::component_log_terms(m, consts, x.row(i).data(), terms);
            const double lse = detail::log_sum_exp(terms);
            ll += lse;
            for (int k = 0; k < K; ++k) resp[std::size_t(i) * std::size_t(K) + std::size_t(k)] = std::exp(terms[std::size_t(k)] - lse);
        }
        res.log_likelihood.push_back(ll);
        res.iterations = iter + 1;
        if (iter > 0) {
            const double prev = res.log_likelihood[res.log_likelihood.size() - 2];
            if (std::abs(ll - prev) <= opt.tol * std::max(1.0, std::abs(prev))) {
                res.converged = true;
                break;
            }
        }
        if (iter + 1 >= opt.max_iters) break;

        // M-step, fixed summation order
        MixtureModel next = m;
        for (int k = 0; k < K; ++k) {
            double nk = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) nk += resp[std::size_t(i) * std::size_t(K) + std::size_t(k)];
            if (!(nk > 1e-300)) {
                next.weights[std::size_t(k)] = 0.0;
                continue;
            }
            next.weights[std::size_t(k)] = nk / double(n);
            auto& mu = next.means[std::size_t(k)];
            std::fill(mu.begin(), mu.end(), 0.0);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double r = resp[std::size_t(i) * std::size_t(K) + std::size_t(k)];
                for (Eigen::Index j = 0; j < d; ++j) mu[std::size_t(j)] += r * x(i, j);
            }
            for (double& v : mu) v /= nk;
            auto& var = next.variances[std::size_t(k)];
            std::fill(var.begin(), var.end(), 0.0);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double r = resp[std::size_t(i) * std::size_t(K) + std::size_t(k)];
                for (Eigen::Index j = 0; j < d; ++j) {
                    const double diff = x(i, j) - mu[std::size_t(j)];
                    var[std::size_t(j)] += r * diff * diff;
                }
            }
            for (double& v : var) v = std::max(v / nk, opt.variance_floor);
        }
        double wsum = 0.0;
        for (double w : next.weights) wsum += w;
        for (double& w : next.weights) w /= wsum;
        m = std::move(next);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Linear reduction

/// y = basis^T (x - mean). An empty basis means identity.
struct LinearReducer {
    int input_dim = 0;
    int output_dim = 0;
    std::vector<double> mean;
    Matrix basis; // input_dim x output_dim, orthonormal columns

    [[nodiscard]] bool identity() const { return basis.size() == 0; }

    [[nodiscard]] std::vector<double> apply(std::span<const double> x) const {
        if (int(x.size()) != input_dim)
            throw ConfigError("embedding dimension " + std::to_string(x.size()) +
                              " does not match reducer input dimension " + std::to_string(input_dim));
        if (identity()) return {x.begin(), x.end()};
        std::vector<double> y(std::size_t(output_dim), 0.0);
        for (int c = 0; c < output_dim; ++c) {
            double s = 0.0;
            for (int j = 0; j < input_dim; ++j) s += basis(j, c) * (x[std::size_t(j)] - mean[std::size_t(j)]);
            y[std::size_t(c)] = s;
        }
        return y;
    }

    [[nodiscard]] Matrix apply(const Matrix& x) const {
        if (x.cols() != input_dim)
            throw ConfigError("embedding dimension " + std::to_string(x.cols()) +
                              " does not match reducer input dimension " + std::to_string(input_dim));
        if (identity()) return x;
        Eigen::Map<const Eigen::RowVectorXd> mu(mean.data(), Eigen::Index(mean.size()));
        return (x.rowwise() - mu) * basis;
    }

    /// mean + basis * y
    [[nodiscard]] std::vector<double> reconstruct(std::span<const double> y) const {
        if (identity()) return {y.begin(), y.end()};
        std::vector<double> x(mean);
        for (int j = 0; j < input_dim; ++j)
            for (int c = 0; c < output_dim; ++c) x[std::size_t(j)] += basis(j, c) * y[std::size_t(c)];
        return x;
    }
};

inline LinearReducer identity_reducer(int dim) { return {dim, dim, {}, {}}; }

/// Principal subspace of the reference rows. Eigenvector signs are fixed so
/// the largest-magnitude entry of each column is positive.
inline LinearReducer fit_reducer(const Matrix& x, int reduce_dim) {
    if (x.rows() < 1 || x.cols() < 1) throw InvalidInput("cannot fit reducer on empty matrix");
    if (reduce_dim < 1) throw InvalidInput("reduce_dim must be >= 1");
    const int d = int(x.cols());
    const int r = std::min(reduce_dim, d);
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Matrix centered = x.rowwise() - mu;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / double(x.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw InvalidInput("eigen decomposition failed");

    LinearReducer red;
    red.input_dim = d;
    red.output_dim = r;
    red.mean.assign(mu.data(), mu.data() + d);
    red.basis.resize(d, r);
    // eigenvalues ascend; take from the back
    for (int c = 0; c < r; ++c) {
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        red.basis.col(c) = v;
    }
    return red;
}

} // namespace d2af
