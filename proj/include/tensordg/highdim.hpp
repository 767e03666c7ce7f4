#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "completion.hpp"
#include "errors.hpp"
#include "index_sets.hpp"
#include "regress.hpp"
#include "tensor.hpp"
#include "transfer.hpp"

namespace tensordg {

struct GroupLassoOptions {
    double tol = 1e-12;     ///< relative objective change at convergence
    double kkt_tol = 1e-8;  ///< block stationarity residual also required at convergence
    int max_iter = 100000;
    double initial_step = 1.0;
};

struct GroupLassoResult {
    std::vector<GroupIndex> groups;  ///< column order of `coefficients`
    Matrix coefficients;             ///< p x |groups|; row j is the coordinate group B_j
    double lambda = 0.0;
    int iterations = 0;
    double kkt_residual = 0.0;
    std::vector<double> objective;   ///< objective after each accepted step

    std::map<GroupIndex, Vector> by_group() const {
        std::map<GroupIndex, Vector> out;
        for (std::size_t k = 0; k < groups.size(); ++k) out.emplace(groups[k], coefficients.col(static_cast<Index>(k)));
        return out;
    }
};

namespace detail {

/// Stacked per-group designs over an ordered group list.
struct GroupProblem {
    std::vector<const GroupData*> data;
    double total = 0.0;  ///< sum of n_g
    Index p = 0;

    GroupProblem(const GroupedDataset& ds, const std::vector<GroupIndex>& groups) {
        if (groups.empty()) throw DimensionError("group lasso needs at least one group");
        p = ds.features();
        for (const auto& g : groups) {
            data.push_back(&ds.at(g));
            total += static_cast<double>(data.back()->samples());
        }
    }

    double loss(const Matrix& B) const {
        double s = 0.0;
        for (std::size_t k = 0; k < data.size(); ++k) {
            s += (data[k]->y - data[k]->X * B.col(static_cast<Index>(k))).squaredNorm();
        }
        return s / total;
    }

    Matrix gradient(const Matrix& B) const {
        Matrix G(p, static_cast<Index>(data.size()));
        for (std::size_t k = 0; k < data.size(); ++k) {
            const Vector r = data[k]->y - data[k]->X * B.col(static_cast<Index>(k));
            G.col(static_cast<Index>(k)) = -2.0 / total * (data[k]->X.transpose() * r);
        }
        return G;
    }
};

inline double row_penalty(const Matrix& B) { return B.rowwise().norm().sum(); }

/// Row-wise group soft-threshold: B_j <- (1 - t/||B_j||)_+ B_j.
inline Matrix block_soft_threshold(const Matrix& Z, double t) {
    Matrix out = Z;
    for (Index j = 0; j < Z.rows(); ++j) {
        const double norm = Z.row(j).norm();
        if (norm <= t) out.row(j).setZero();
        else out.row(j) *= 1.0 - t / norm;
    }
    return out;
}

inline double block_kkt(const Matrix& grad, const Matrix& B, double lambda) {
    double worst = 0.0;
    for (Index j = 0; j < B.rows(); ++j) {
        const double norm = B.row(j).norm();
        const double v = norm == 0.0 ? std::max(0.0, grad.row(j).norm() - lambda)
                                     : (grad.row(j) + lambda * B.row(j) / norm).norm();
        worst = std::max(worst, v);
    }
    return worst;
}

}  // namespace detail

/// Smallest lambda with the all-zero solution: max_j ||grad_j(0)||.
inline double group_lasso_lambda_max(const GroupedDataset& ds, const std::vector<GroupIndex>& groups) {
    const detail::GroupProblem prob(ds, groups);
    const Matrix G = prob.gradient(Matrix::Zero(prob.p, static_cast<Index>(groups.size())));
    return G.rowwise().norm().maxCoeff();
}

inline double group_lasso_objective(const GroupedDataset& ds, const std::vector<GroupIndex>& groups, const Matrix& B,
                                    double lambda) {
    const detail::GroupProblem prob(ds, groups);
    return prob.loss(B) + lambda * detail::row_penalty(B);
}

/// Block stationarity residual of a candidate solution.
inline double group_lasso_kkt(const GroupedDataset& ds, const std::vector<GroupIndex>& groups, const Matrix& B,
                              double lambda) {
    const detail::GroupProblem prob(ds, groups);
    return detail::block_kkt(prob.gradient(B), B, lambda);
}

/**
 * Proximal gradient with backtracking for
 * (1/sum n_g) sum_g ||y_g - X_g b_g||^2 + lambda sum_j ||B_j||.
 * The step starts at `initial_step` and is halved until the quadratic upper
 * bound holds; accepted steps carry over to the next iteration.
 */
inline GroupLassoResult group_lasso(const GroupedDataset& ds, const std::vector<GroupIndex>& groups, double lambda,
                                    const GroupLassoOptions& opts = {}, const Matrix* warm_start = nullptr) {
    if (!(lambda > 0.0)) throw std::invalid_argument("group_lasso: lambda must be positive");
    const detail::GroupProblem prob(ds, groups);
    const auto m = static_cast<Index>(groups.size());
    GroupLassoResult out;
    out.groups = groups;
    out.lambda = lambda;
    Matrix B = warm_start ? *warm_start : Matrix::Zero(prob.p, m);
    if (B.rows() != prob.p || B.cols() != m) throw DimensionError("group_lasso: warm start has the wrong shape");

    double step = opts.initial_step;
    double loss = prob.loss(B);
    double obj = loss + lambda * detail::row_penalty(B);
    for (int it = 0; it < opts.max_iter; ++it) {
        const Matrix grad = prob.gradient(B);
        Matrix next;
        double next_loss = 0.0;
        while (true) {
            next = detail::block_soft_threshold(B - step * grad, step * lambda);
            const Matrix diff = next - B;
            next_loss = prob.loss(next);
            const double bound = loss + (grad.array() * diff.array()).sum() + diff.squaredNorm() / (2.0 * step);
            if (next_loss <= bound + 1e-15 * std::abs(loss)) break;
            step *= 0.5;
            if (step < 1e-300) throw ConvergenceError("group_lasso: line search failed", std::numeric_limits<double>::infinity());
        }
        const double next_obj = next_loss + lambda * detail::row_penalty(next);
        B = std::move(next);
        loss = next_loss;
        out.iterations = it + 1;
        out.objective.push_back(next_obj);
        const double change = std::abs(obj - next_obj) / std::max(std::abs(obj), std::numeric_limits<double>::min());
        obj = next_obj;
        if (change < opts.tol) {
            const double kkt = detail::block_kkt(prob.gradient(B), B, lambda);
            if (kkt <= opts.kkt_tol) {
                out.coefficients = std::move(B);
                out.kkt_residual = kkt;
                return out;
            }
        }
    }
    const double kkt = detail::block_kkt(prob.gradient(B), B, lambda);
    throw ConvergenceError("group_lasso did not converge in " + std::to_string(opts.max_iter) +
                               " iterations (KKT residual " + std::to_string(kkt) + ")",
                           kkt);
}

/// Coordinates j with sqrt(sum_g b_j(g)^2) >= threshold (0-based, ascending).
inline std::vector<Index> select_support(const Matrix& coefficients, double threshold) {
    std::vector<Index> s;
    for (Index j = 0; j < coefficients.rows(); ++j) {
        if (!coefficients.row(j).allFinite()) throw DimensionError("select_support: non-finite coefficient");
        if (coefficients.row(j).norm() >= threshold) s.push_back(j);
    }
    return s;
}

struct SupportSelection {
    GroupLassoResult fit;
    std::vector<Index> support;  ///< S_hat, 0-based
    double lambda = 0.0;
    double threshold = 0.0;
};

struct HighDimOptions {
    std::optional<double> lambda;     ///< group-Lasso penalty; chosen on a holdout when absent
    std::optional<double> threshold;  ///< support threshold; defaults to lambda
    int grid_size = 20;
    double holdout_fraction = 0.2;
    double path_tol = 1e-6;  ///< solver tolerance along the holdout path only
    std::uint64_t seed = 0;
    GroupLassoOptions solver;
    FitOptions fit;
};

/// Penalty chosen on a per-group holdout over a geometric grid (warm-started path).
inline double select_group_lasso_lambda(const GroupedDataset& ds, const std::vector<GroupIndex>& groups,
                                        const HighDimOptions& opts) {
    GroupedDataset train(ds.features()), valid(ds.features());
    for (const auto& g : groups) {
        const GroupData& d = ds.at(g);
        const Index n = d.samples();
        const auto n_valid = static_cast<Index>(std::floor(opts.holdout_fraction * static_cast<double>(n)));
        if (n_valid < 1 || n - n_valid < 1) throw DimensionError("group " + g.to_string() + " too small for a holdout");
        auto [first, second] = split_indices(n, derive_seed(opts.seed, {0x686f6c64ULL, group_key(g)}));
        std::vector<Index> order(first);
        order.insert(order.end(), second.begin(), second.end());
        std::vector<Index> va(order.begin(), order.begin() + n_valid);
        std::vector<Index> tr(order.begin() + n_valid, order.end());
        std::sort(va.begin(), va.end());
        std::sort(tr.begin(), tr.end());
        auto a = take_rows(d, tr);
        auto b = take_rows(d, va);
        train.add(g, std::move(a.X), std::move(a.y));
        valid.add(g, std::move(b.X), std::move(b.y));
    }
    const auto grid = lambda_grid(group_lasso_lambda_max(train, groups), opts.grid_size);
    if (grid.empty()) throw DimensionError("degenerate data: lambda_max is zero");
    const detail::GroupProblem vprob(valid, groups);
    double best_loss = std::numeric_limits<double>::infinity();
    double best = grid.front();
    GroupLassoOptions path = opts.solver;
    path.tol = std::max(path.tol, opts.path_tol);
    path.kkt_tol = std::numeric_limits<double>::infinity();
    Matrix warm = Matrix::Zero(ds.features(), static_cast<Index>(groups.size()));
    for (double lam : grid) {
        const auto fit = group_lasso(train, groups, lam, path, &warm);
        warm = fit.coefficients;
        const double l = vprob.loss(fit.coefficients);
        if (l < best_loss) {
            best_loss = l;
            best = lam;
        }
    }
    return best;
}

/// Group-Lasso fit over the observed groups and the thresholded support.
inline SupportSelection estimate_support(const GroupedDataset& ds, const ObservationPattern& pattern,
                                         const HighDimOptions& opts = {}) {
    const auto groups = pattern.observed_list();
    SupportSelection sel;
    sel.lambda = opts.lambda ? *opts.lambda : select_group_lasso_lambda(ds, groups, opts);
    sel.threshold = opts.threshold ? *opts.threshold : sel.lambda;
    sel.fit = group_lasso(ds, groups, sel.lambda, opts.solver);
    sel.support = select_support(sel.fit.coefficients, sel.threshold);
    return sel;
}

struct HighDimFit {
    CompletionModel model;       ///< embedded in the full feature space
    CompletionModel restricted;  ///< fit on the selected columns
    SupportSelection selection;
};

/// Embed a model fit on columns `support` into p features with zeros elsewhere.
inline CompletionModel embed_model(const CompletionModel& restricted, const std::vector<Index>& support, Index p) {
    CompletionModel out = restricted;
    std::vector<Index> dims = restricted.beta_hat.dims();
    dims[0] = p;
    out.beta_hat = DenseTensor(dims);
    const Index s = restricted.beta_hat.dim(0);
    const Index rest = restricted.beta_hat.size() / std::max<Index>(s, 1);
    // dims[0] is the slowest mode, so each feature occupies one contiguous run of `rest` entries.
    for (Index k = 0; k < s; ++k) {
        out.beta_hat.data().segment(support[static_cast<std::size_t>(k)] * rest, rest) =
            restricted.beta_hat.data().segment(k * rest, rest);
    }
    Matrix v0 = Matrix::Zero(p, restricted.bases[0].cols());
    Matrix g0 = Matrix::Zero(restricted.loadings[0].rows(), p);
    for (Index k = 0; k < s; ++k) {
        v0.row(support[static_cast<std::size_t>(k)]) = restricted.bases[0].row(k);
        g0.col(support[static_cast<std::size_t>(k)]) = restricted.loadings[0].col(k);
    }
    out.bases[0] = std::move(v0);
    out.loadings[0] = std::move(g0);
    return out;
}

/// TensorDG on a column subset, embedded with zero rows outside it.
inline HighDimFit fit_on_support(const GroupedDataset& ds, const ObservationPattern& pattern,
                                 const std::vector<Index>& support, const FitOptions& opts = {}) {
    if (support.empty()) throw DimensionError("selected support is empty");
    Index min_n = std::numeric_limits<Index>::max();
    for (const auto& g : pattern.observed()) min_n = std::min(min_n, ds.at(g).samples());
    if (static_cast<Index>(support.size()) >= min_n) {
        throw DimensionError("selected support size " + std::to_string(support.size()) +
                             " is not below the smallest group sample size " + std::to_string(min_n));
    }
    HighDimFit out;
    out.restricted = fit_tensordg(ds.select_features(support), pattern, opts);
    out.model = embed_model(out.restricted, support, ds.features());
    return out;
}

/// Group-Lasso support selection followed by TensorDG on the selected coordinates.
inline HighDimFit fit_highdim(const GroupedDataset& ds, const ObservationPattern& pattern,
                              const HighDimOptions& opts = {}) {
    auto sel = estimate_support(ds, pattern, opts);
    HighDimFit out = fit_on_support(ds, pattern, sel.support, opts.fit);
    out.selection = std::move(sel);
    return out;
}

}  // namespace tensordg
