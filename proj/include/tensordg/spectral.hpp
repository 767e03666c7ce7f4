#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "index_sets.hpp"
#include "regress.hpp"
#include "tensor.hpp"

namespace tensordg {

/**
 * Stack coefficient vectors into a (rows * p) x levels matrix: column j holds
 * the vertical concatenation of beta(g) over the partial tuples in `rows`,
 * with level levels[j] inserted at `mode`. This is the transpose of the
 * mode-t unfolding of the sub-tensor, up to a fixed row permutation.
 */
template <class Lookup>
Matrix stack_block(const std::vector<PartialIndex>& rows, Index mode, const std::vector<Index>& levels,
                   Index features, Lookup&& beta_of) {
    Matrix out(static_cast<Index>(rows.size()) * features, static_cast<Index>(levels.size()));
    for (std::size_t j = 0; j < levels.size(); ++j) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const GroupIndex g = insert_level(rows[k], mode, levels[j]);
            out.block(static_cast<Index>(k) * features, static_cast<Index>(j), features, 1) = beta_of(g);
        }
    }
    return out;
}

/// |O| x p matrix whose rows are the coefficient vectors of `groups`.
template <class Lookup>
Matrix stack_rows(const std::vector<GroupIndex>& groups, Index features, Lookup&& beta_of) {
    Matrix out(static_cast<Index>(groups.size()), features);
    for (std::size_t k = 0; k < groups.size(); ++k) out.row(static_cast<Index>(k)) = beta_of(groups[k]).transpose();
    return out;
}

/// Size of the block that normalizes the mode-t second moment: |O| for mode 0, |C_t| otherwise.
inline Index gram_block_size(const ObservationPattern& pattern, Index mode) {
    return mode == 0 ? pattern.observed_count() : static_cast<Index>(pattern.cset(mode).size());
}

/**
 * Bias-corrected second-moment matrix of mode t from the first-fold fits.
 *
 * Mode 0: B^T B / |O| - sum_g Sigma_g^{-1} sigma_g^2 / n_g / |O|, over all observed groups.
 * Mode t: B^T B / |C_t| - Diag(v) / |C_t| with B stacked over C_t x Omega_t and
 * v_j = sum over the column-j groups of Tr(Sigma_g^{-1}) sigma_g^2 / n_g.
 */
inline Matrix mode_gram(const GroupEstimates& est, const ObservationPattern& pattern, Index mode) {
    const Index p = est.features();
    auto beta_of = [&](const GroupIndex& g) -> const Vector& { return est.first_fit(g).beta; };
    Matrix theta;
    if (mode == 0) {
        const auto groups = pattern.observed_list();
        const Matrix B = stack_rows(groups, p, beta_of);
        Matrix correction = Matrix::Zero(p, p);
        for (const auto& g : groups) {
            const OlsFit& f = est.first_fit(g);
            correction += f.gram_inv * (f.sigma2 / static_cast<double>(f.n));
        }
        const double size = static_cast<double>(groups.size());
        theta = (B.transpose() * B - correction) / size;
    } else {
        if (mode < 1 || mode > static_cast<Index>(pattern.q())) {
            throw RangeError("mode_gram: mode " + std::to_string(mode) + " out of range");
        }
        const auto rows = pattern.cset(mode);
        const auto& levels = pattern.body(mode);
        const Matrix B = stack_block(rows, mode, levels, p, beta_of);
        Vector v = Vector::Zero(static_cast<Index>(levels.size()));
        for (std::size_t j = 0; j < levels.size(); ++j) {
            for (const auto& r : rows) {
                const OlsFit& f = est.first_fit(insert_level(r, mode, levels[j]));
                v[static_cast<Index>(j)] += f.gram_inv.trace() * f.sigma2 / static_cast<double>(f.n);
            }
        }
        const double size = static_cast<double>(rows.size());
        theta = (B.transpose() * B) / size;
        theta.diagonal() -= v / size;
    }
    return 0.5 * (theta + theta.transpose());
}

/// Eigen-decomposition sorted by descending eigenvalue.
struct SortedEigen {
    Vector values;
    Matrix vectors;
};

inline SortedEigen sorted_eigen(const Matrix& symmetric) {
    const Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric);
    if (solver.info() != Eigen::Success) throw ConvergenceError("eigendecomposition failed", 0.0);
    const Index n = symmetric.rows();
    SortedEigen out{solver.eigenvalues().reverse(), solver.eigenvectors().rowwise().reverse()};
    for (Index k = 0; k < n; ++k) {
        if (!std::isfinite(out.values[k])) throw ConvergenceError("non-finite eigenvalue", 0.0);
        // Fix the sign so that the largest-magnitude entry of each eigenvector is positive.
        Index arg = 0;
        out.vectors.col(k).cwiseAbs().maxCoeff(&arg);
        if (out.vectors(arg, k) < 0.0) out.vectors.col(k) *= -1.0;
    }
    return out;
}

struct RankSelection {
    Index rank = 0;
    Matrix basis;        ///< leading `rank` eigenvectors
    double threshold = 0.0;
    Vector eigenvalues;  ///< descending
    Matrix eigenvectors;
    bool floored = false;  ///< no eigenvalue reached the threshold; rank forced to 1
};

/**
 * Threshold C * sqrt(||Theta||_2 (d + log n_bar) / (n_bar * block_size)) with
 * d = dim(Theta); the rank is the number of eigenvalues at or above it.
 */
inline double rank_threshold(double spectral_norm, Index dim, double n_bar, Index block_size, double c) {
    return c * std::sqrt(spectral_norm * (static_cast<double>(dim) + std::log(n_bar)) /
                         (n_bar * static_cast<double>(block_size)));
}

/// Eigenvalues below this fraction of ||Theta||_2 are numerical zeros and never count toward the rank.
inline constexpr double kRankRelativeFloor = 1e-10;

/**
 * Root-mean-square OLS noise level per coordinate, sqrt(mean_g sigma2_g tr(G_g^{-1}) / p)
 * over the first-fold fits; equals sigma for an identity design.
 */
inline double noise_scale(const GroupEstimates& est) {
    if (est.first.empty()) throw DimensionError("noise_scale: no group estimates");
    double s = 0.0;
    for (const auto& [g, f] : est.first) s += f.sigma2 * f.gram_inv.trace() / static_cast<double>(f.beta.size());
    return std::sqrt(s / static_cast<double>(est.first.size()));
}

inline RankSelection select_rank(const Matrix& theta, double n_bar, Index block_size, double c) {
    if (n_bar < 2.0) throw DimensionError("select_rank: mean sample size must be at least 2");
    if (block_size < 1) throw DimensionError("select_rank: block size must be positive");
    auto eig = sorted_eigen(theta);
    RankSelection out;
    const double norm = eig.values.cwiseAbs().maxCoeff();
    out.threshold = std::max(rank_threshold(norm, theta.rows(), n_bar, block_size, c), kRankRelativeFloor * norm);
    out.rank = static_cast<Index>((eig.values.array() >= out.threshold).count());
    if (out.rank == 0) {
        out.rank = 1;
        out.floored = true;
    }
    out.basis = eig.vectors.leftCols(out.rank);
    out.eigenvalues = std::move(eig.values);
    out.eigenvectors = std::move(eig.vectors);
    return out;
}

inline constexpr double kEigenRatioFloor = 1e-12;

/// Eigen-ratio diagnostics on bias-corrected spectra floor eigenvalues at this fraction of the rank threshold.
inline constexpr double kRatioFloorFraction = 0.25;

/// argmax_k lambda_k / lambda_{k+1} over k = 1..ceil(len/2), eigenvalues clamped below.
inline Index eigen_ratio_rank(const Vector& eigenvalues, double floor = kEigenRatioFloor) {
    const Index n = eigenvalues.size();
    if (n < 2) throw DimensionError("eigen_ratio_rank needs at least two eigenvalues");
    const Index kmax = std::min<Index>((n + 1) / 2, n - 1);
    Index best = 1;
    double best_ratio = -1.0;
    for (Index k = 1; k <= kmax; ++k) {
        const double ratio = std::max(eigenvalues[k - 1], floor) / std::max(eigenvalues[k], floor);
        if (ratio > best_ratio) {
            best_ratio = ratio;
            best = k;
        }
    }
    return best;
}

/// min_{1<=r<=rank} lambda_r - lambda_{r+1}, with lambda beyond the spectrum taken as 0.
inline double eigen_gap(const Vector& eigenvalues, Index rank) {
    double gap = std::numeric_limits<double>::infinity();
    for (Index r = 1; r <= rank && r <= eigenvalues.size(); ++r) {
        const double next = r < eigenvalues.size() ? eigenvalues[r] : 0.0;
        gap = std::min(gap, eigenvalues[r - 1] - next);
    }
    return gap;
}

struct ModeSpectrum {
    Index mode = 0;
    Matrix theta;
    Vector eigenvalues;
    Index rank = 0;
    Matrix basis;
    double threshold = 0.0;
    Index block_size = 0;
    bool floored = false;
    bool overridden = false;
    double gap = 0.0;
    Index ratio_rank = 0;  ///< eigen-ratio selector floored at the threshold; 0 when the spectrum is too short
};

struct SpectralResult {
    std::vector<ModeSpectrum> modes;  ///< index t = mode t, t = 0..q

    std::vector<Index> ranks() const {
        std::vector<Index> r;
        for (const auto& m : modes) r.push_back(m.rank);
        return r;
    }
    std::vector<std::string> warnings() const {
        std::vector<std::string> w;
        for (const auto& m : modes) {
            if (m.floored) {
                w.push_back("mode " + std::to_string(m.mode) +
                            ": no eigenvalue reached the threshold, rank floored to 1");
            }
        }
        return w;
    }
};

/**
 * Rank and basis of every mode. The threshold constant is c times the OLS
 * noise scale, which keeps the rule equivariant under rescaling the response.
 * `rank_override`, when given, fixes the ranks (one per mode, 0..q) and skips
 * the threshold rule.
 */
inline SpectralResult spectral_step(const GroupEstimates& est, const ObservationPattern& pattern, double c,
                                    const std::optional<std::vector<Index>>& rank_override = std::nullopt) {
    const auto q = static_cast<Index>(pattern.q());
    if (rank_override && static_cast<Index>(rank_override->size()) != q + 1) {
        throw DimensionError("rank override needs one rank per mode (q+1 entries)");
    }
    SpectralResult out;
    const double c_eff = c * noise_scale(est);
    for (Index t = 0; t <= q; ++t) {
        ModeSpectrum m;
        m.mode = t;
        m.theta = mode_gram(est, pattern, t);
        m.block_size = gram_block_size(pattern, t);
        auto sel = select_rank(m.theta, est.n_bar, m.block_size, c_eff);
        m.threshold = sel.threshold;
        m.eigenvalues = sel.eigenvalues;
        if (rank_override) {
            const Index r = (*rank_override)[static_cast<std::size_t>(t)];
            if (r < 1 || r > m.theta.rows()) {
                throw DimensionError("rank override " + std::to_string(r) + " invalid for mode " + std::to_string(t));
            }
            m.rank = r;
            m.basis = sel.eigenvectors.leftCols(r);
            m.overridden = true;
        } else {
            m.rank = sel.rank;
            m.basis = std::move(sel.basis);
            m.floored = sel.floored;
        }
        m.gap = eigen_gap(m.eigenvalues, m.rank);
        m.ratio_rank = m.eigenvalues.size() >= 2
                           ? eigen_ratio_rank(m.eigenvalues, std::max(kEigenRatioFloor, kRatioFloorFraction * m.threshold))
                           : 0;
        out.modes.push_back(std::move(m));
    }
    return out;
}

}  // namespace tensordg
