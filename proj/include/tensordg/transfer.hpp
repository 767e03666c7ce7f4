#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "completion.hpp"
#include "errors.hpp"
#include "regress.hpp"
#include "tensor.hpp"

namespace tensordg {

inline double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

struct LassoOptions {
    double tol = 1e-8;        ///< max coordinate change at convergence
    int max_iter = 100000;    ///< full sweeps
};

struct LassoResult {
    Vector delta;
    int sweeps = 0;
    double kkt_residual = 0.0;
    std::vector<double> objective;  ///< objective after each sweep
};

/// (1/n)||y - X(offset + delta)||^2 + lambda ||delta||_1
inline double lasso_objective(const Matrix& X, const Vector& y, const Vector& offset, const Vector& delta,
                              double lambda) {
    const double n = static_cast<double>(X.rows());
    return (y - X * (offset + delta)).squaredNorm() / n + lambda * delta.lpNorm<1>();
}

/**
 * Largest violation of the optimality conditions: with g = (2/n) X^T r,
 * g_j = lambda sign(delta_j) on the support and |g_j| <= lambda off it.
 */
inline double lasso_kkt_residual(const Matrix& X, const Vector& y, const Vector& offset, const Vector& delta,
                                 double lambda) {
    const double n = static_cast<double>(X.rows());
    const Vector g = 2.0 / n * X.transpose() * (y - X * (offset + delta));
    double worst = 0.0;
    for (Index j = 0; j < delta.size(); ++j) {
        const double v = delta[j] != 0.0 ? std::abs(g[j] - lambda * (delta[j] > 0 ? 1.0 : -1.0))
                                         : std::max(0.0, std::abs(g[j]) - lambda);
        worst = std::max(worst, v);
    }
    return worst;
}

/// Smallest lambda for which delta = 0 is optimal.
inline double lasso_lambda_max(const Matrix& X, const Vector& y, const Vector& offset) {
    const double n = static_cast<double>(X.rows());
    return 2.0 / n * (X.transpose() * (y - X * offset)).cwiseAbs().maxCoeff();
}

/**
 * Cyclic coordinate descent (coordinates 1..p in order) for
 * argmin_delta (1/n)||y - X offset - X delta||^2 + lambda ||delta||_1.
 */
inline LassoResult lasso_offset(const Matrix& X, const Vector& y, const Vector& offset, double lambda,
                                const LassoOptions& opts = {}) {
    if (!(lambda > 0.0)) throw std::invalid_argument("lasso_offset: lambda must be positive");
    if (X.rows() < 1) throw DimensionError("lasso_offset: need at least one sample");
    if (y.size() != X.rows() || offset.size() != X.cols()) throw DimensionError("lasso_offset: shape mismatch");
    const double n = static_cast<double>(X.rows());
    const Index p = X.cols();
    const Vector col_sq = X.colwise().squaredNorm().transpose() * (2.0 / n);

    LassoResult out;
    out.delta = Vector::Zero(p);
    Vector r = y - X * offset;
    for (int sweep = 0; sweep < opts.max_iter; ++sweep) {
        double max_change = 0.0;
        for (Index j = 0; j < p; ++j) {
            if (col_sq[j] == 0.0) continue;
            const double old = out.delta[j];
            const double z = 2.0 / n * X.col(j).dot(r) + col_sq[j] * old;
            const double updated = soft_threshold(z, lambda) / col_sq[j];
            if (updated != old) {
                r -= X.col(j) * (updated - old);
                out.delta[j] = updated;
                max_change = std::max(max_change, std::abs(updated - old));
            }
        }
        out.sweeps = sweep + 1;
        out.objective.push_back(r.squaredNorm() / n + lambda * out.delta.lpNorm<1>());
        if (max_change < opts.tol) {
            out.kkt_residual = lasso_kkt_residual(X, y, offset, out.delta, lambda);
            return out;
        }
    }
    const double kkt = lasso_kkt_residual(X, y, offset, out.delta, lambda);
    throw ConvergenceError("lasso_offset did not converge in " + std::to_string(opts.max_iter) +
                               " sweeps (KKT residual " + std::to_string(kkt) + ")",
                           kkt);
}

struct TransferOptions {
    std::optional<double> lambda;  ///< explicit penalty; otherwise c0 sqrt(log p / n) or CV
    double c0 = 2.0;
    bool cross_validate = false;
    int folds = 5;
    int grid_size = 20;
    std::uint64_t seed = 0;
    LassoOptions lasso;
};

struct TransferResult {
    Vector gamma_hat;
    Vector delta_hat;
    Vector beta_hat;  ///< completed coefficient at the target group
    double lambda_used = 0.0;
    std::vector<Index> support;  ///< 0-based coordinates with nonzero delta
};

inline double default_transfer_lambda(Index p, Index n, double c0) {
    return c0 * std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n));
}

/// Geometric grid of `size` values from lambda_max down to lambda_max / 100.
inline std::vector<double> lambda_grid(double lambda_max, int size) {
    std::vector<double> grid;
    if (size < 1 || !(lambda_max > 0.0)) return grid;
    for (int k = 0; k < size; ++k) {
        const double frac = size == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(size - 1);
        grid.push_back(lambda_max * std::pow(0.01, frac));
    }
    return grid;
}

/// K-fold cross-validated penalty for the offset Lasso; folds are a seeded permutation.
inline double cross_validate_lambda(const Matrix& X, const Vector& y, const Vector& offset, const TransferOptions& opts) {
    const Index n = X.rows();
    const int k = std::max(2, std::min<int>(opts.folds, static_cast<int>(n)));
    const double lmax = lasso_lambda_max(X, y, offset);
    if (!(lmax > 0.0)) return default_transfer_lambda(X.cols(), n, opts.c0);
    const auto grid = lambda_grid(lmax, opts.grid_size);
    auto [first, second] = split_indices(n, opts.seed);
    std::vector<Index> order(first);
    order.insert(order.end(), second.begin(), second.end());
    std::vector<double> loss(grid.size(), 0.0);
    for (int f = 0; f < k; ++f) {
        std::vector<Index> train, test;
        for (Index i = 0; i < n; ++i) (i % k == f ? test : train).push_back(order[static_cast<std::size_t>(i)]);
        if (train.empty() || test.empty()) continue;
        const GroupData all{X, y};
        const GroupData tr = take_rows(all, train);
        const GroupData te = take_rows(all, test);
        for (std::size_t l = 0; l < grid.size(); ++l) {
            const auto fit = lasso_offset(tr.X, tr.y, offset, grid[l], opts.lasso);
            loss[l] += (te.y - te.X * (offset + fit.delta)).squaredNorm();
        }
    }
    return grid[static_cast<std::size_t>(std::min_element(loss.begin(), loss.end()) - loss.begin())];
}

/// Offset Lasso correction of a completed coefficient at the target group.
inline TransferResult transfer_from_coefficient(const Vector& beta_hat, const Matrix& X, const Vector& y,
                                                const TransferOptions& opts = {}) {
    if (X.rows() < 1) throw DimensionError("transfer needs at least one target sample");
    if (X.cols() != beta_hat.size()) throw DimensionError("target design has the wrong number of features");
    TransferResult out;
    out.beta_hat = beta_hat;
    if (opts.lambda) out.lambda_used = *opts.lambda;
    else if (opts.cross_validate) out.lambda_used = cross_validate_lambda(X, y, beta_hat, opts);
    else out.lambda_used = default_transfer_lambda(X.cols(), X.rows(), opts.c0);
    out.delta_hat = lasso_offset(X, y, beta_hat, out.lambda_used, opts.lasso).delta;
    out.gamma_hat = beta_hat + out.delta_hat;
    for (Index j = 0; j < out.delta_hat.size(); ++j) {
        if (out.delta_hat[j] != 0.0) out.support.push_back(j);
    }
    return out;
}

inline TransferResult tensortl(const CompletionModel& model, const GroupIndex& target, const Matrix& X, const Vector& y,
                               const TransferOptions& opts = {}) {
    return transfer_from_coefficient(coefficient(model, target), X, y, opts);
}

}  // namespace tensordg
