#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "index_sets.hpp"
#include "regress.hpp"
#include "spectral.hpp"
#include "tensor.hpp"

namespace tensordg {

struct BaselineEstimate {
    std::string method;
    Vector estimate;
    Vector weights;          ///< Maximin only
    Index subspace_dim = 0;  ///< Meta-LM* only
};

/// OLS on one group's data alone.
inline Vector single_task_ols(const GroupedDataset& ds, const GroupIndex& g) {
    const GroupData& d = ds.at(g);
    return ols_fit(d.X, d.y).beta;
}

/// n_g-weighted average of the per-group sample Grams X^T X / n_g.
inline Matrix pooled_gram(const GroupedDataset& ds, const std::vector<GroupIndex>& groups) {
    if (groups.empty()) throw DimensionError("pooled_gram needs at least one group");
    Matrix s = Matrix::Zero(ds.features(), ds.features());
    double total = 0.0;
    for (const auto& g : groups) {
        const GroupData& d = ds.at(g);
        s.noalias() += d.X.transpose() * d.X;
        total += static_cast<double>(d.samples());
    }
    return s / total;
}

/// Euclidean projection onto the probability simplex (sort-based).
inline Vector project_simplex(const Vector& v) {
    const Index n = v.size();
    if (n == 0) throw DimensionError("project_simplex: empty vector");
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumsum = 0.0;
    double theta = 0.0;
    for (Index k = 0; k < n; ++k) {
        cumsum += u[static_cast<std::size_t>(k)];
        const double t = (cumsum - 1.0) / static_cast<double>(k + 1);
        if (u[static_cast<std::size_t>(k)] - t > 0.0) theta = t;
    }
    Vector w = (v.array() - theta).cwiseMax(0.0);
    const double s = w.sum();
    if (s > 0.0) w /= s;
    return w;
}

struct MaximinOptions {
    double tol = 1e-8;  ///< max weight change at convergence
    int max_iter = 1000000;
};

struct MaximinResult {
    Vector beta;
    Vector weights;
    std::vector<GroupIndex> groups;
    std::vector<double> objective;  ///< w^T G w per iteration
    int iterations = 0;
};

/**
 * Maximin aggregate sum_g w_g beta(g), with w minimizing w^T G w over the
 * simplex, G_gh = beta(g)^T S beta(h). Projected gradient with step 1/L.
 */
inline MaximinResult maximin(const std::vector<GroupIndex>& groups, const std::vector<Vector>& betas,
                             const Matrix& gram, const MaximinOptions& opts = {}) {
    if (groups.empty() || groups.size() != betas.size()) throw DimensionError("maximin needs one estimate per group");
    const auto m = static_cast<Index>(betas.size());
    const Index p = betas.front().size();
    if (gram.rows() != p || gram.cols() != p) throw DimensionError("maximin: Gram has the wrong shape");
    Matrix B(p, m);
    for (Index k = 0; k < m; ++k) B.col(k) = betas[static_cast<std::size_t>(k)];
    Matrix G = B.transpose() * gram * B;
    G = 0.5 * (G + G.transpose());

    MaximinResult out;
    out.groups = groups;
    Vector w = Vector::Constant(m, 1.0 / static_cast<double>(m));
    const double lip = 2.0 * Eigen::SelfAdjointEigenSolver<Matrix>(G, Eigen::EigenvaluesOnly).eigenvalues().cwiseAbs().maxCoeff();
    bool done = !(lip > 0.0);
    out.objective.push_back(w.dot(G * w));
    for (int it = 0; !done && it < opts.max_iter; ++it) {
        const Vector next = project_simplex(w - (2.0 / lip) * (G * w));
        const double change = (next - w).cwiseAbs().maxCoeff();
        w = next;
        out.iterations = it + 1;
        out.objective.push_back(w.dot(G * w));
        done = change < opts.tol;
    }
    if (!done) {
        throw ConvergenceError("maximin did not converge in " + std::to_string(opts.max_iter) + " iterations",
                               out.objective.back());
    }
    out.weights = w;
    out.beta = B * w;
    return out;
}

/// Maximin over second-fold estimates of every observed group.
inline MaximinResult maximin(const GroupEstimates& est, const Matrix& gram, const MaximinOptions& opts = {}) {
    std::vector<GroupIndex> groups;
    std::vector<Vector> betas;
    for (const auto& [g, fit] : est.second) {
        groups.push_back(g);
        betas.push_back(fit.beta);
    }
    return maximin(groups, betas, gram, opts);
}

struct MetaLmResult {
    Vector beta;
    Matrix basis;  ///< V_0, p x r_0
    Vector score;
    Index rank = 0;
};

/**
 * Meta-LM*: the mode-0 subspace from the bias-corrected spectral step on the
 * source groups, then OLS of the target response on X V_0.
 */
inline MetaLmResult meta_lm_star(const GroupEstimates& est, const ObservationPattern& pattern, const Matrix& X,
                                 const Vector& y, double c = 1.0, std::optional<Index> rank_override = std::nullopt) {
    const Matrix theta = mode_gram(est, pattern, 0);
    const auto sel = select_rank(theta, est.n_bar, gram_block_size(pattern, 0), c);
    MetaLmResult out;
    if (rank_override) {
        if (*rank_override < 1 || *rank_override > theta.rows()) throw DimensionError("meta_lm_star: invalid rank");
        out.rank = *rank_override;
        out.basis = sel.eigenvectors.leftCols(out.rank);
    } else {
        out.rank = sel.rank;
        out.basis = sel.basis;
    }
    if (X.rows() <= out.rank) {
        throw DimensionError("meta_lm_star: " + std::to_string(X.rows()) + " target samples for subspace dimension " +
                             std::to_string(out.rank));
    }
    if (X.cols() != out.basis.rows() || y.size() != X.rows()) throw DimensionError("meta_lm_star: shape mismatch");
    out.score = ols_fit(X * out.basis, y).beta;
    out.beta = out.basis * out.score;
    return out;
}

}  // namespace tensordg
