#pragma once

#include <cstdint>
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

struct FitOptions {
    bool split = false;
    std::uint64_t seed = 0;
    double threshold_c = 1.0;
    std::optional<std::vector<Index>> rank_override;
    /// Report raw second-fold OLS for observed groups instead of the completed tensor.
    bool keep_observed_ols = false;
    double max_condition = 1e10;
};

/// Joint and arm measurements of one mode.
struct ModeBlocks {
    Matrix joint_first;   ///< first-fold joint block, (a_t p) x omega_t  (mode 0: |O| x p)
    Matrix joint_second;  ///< second-fold joint block
    Matrix arm_second;    ///< second-fold arm block, (a_t p) x p_t  (mode 0: |O| x p)
};

/**
 * Unfold the joint block A_t x Omega_t and the arm block A_t x [p_t] of both
 * folds; rows follow the lexicographic order of A_t in every matrix.
 */
inline ModeBlocks unfold_blocks(const GroupEstimates& est, const ObservationPattern& pattern, Index mode) {
    const Index p = est.features();
    auto first = [&](const GroupIndex& g) -> const Vector& { return est.first_fit(g).beta; };
    auto second = [&](const GroupIndex& g) -> const Vector& { return est.second_fit(g).beta; };
    ModeBlocks b;
    if (mode == 0) {
        const auto groups = pattern.observed_list();
        b.joint_first = stack_rows(groups, p, first);
        b.joint_second = stack_rows(groups, p, second);
        b.arm_second = b.joint_second;
        return b;
    }
    const auto rows = pattern.arm(mode);
    b.joint_first = stack_block(rows, mode, pattern.body(mode), p, first);
    b.joint_second = stack_block(rows, mode, pattern.body(mode), p, second);
    b.arm_second = stack_block(rows, mode, full_range(pattern.levels(mode)), p, second);
    return b;
}

inline double condition_number(const Matrix& m) {
    const Vector sv = Eigen::JacobiSVD<Matrix>(m).singularValues();
    if (sv.size() == 0) return 0.0;
    const double smin = sv[sv.size() - 1];
    return smin > 0.0 ? sv[0] / smin : std::numeric_limits<double>::infinity();
}

struct GammaEstimate {
    Matrix gamma;  ///< r_t x p_t  (mode 0: r_0 x p)
    double condition = 0.0;
};

/**
 * Loading estimate (V^T B1^T B2 V)^{-1} (B1 V)^T B_arm, where B1/B2 are the
 * first/second-fold joint blocks and B_arm the second-fold arm block.
 */
inline GammaEstimate estimate_gamma(Index mode, const ModeBlocks& blocks, const Matrix& basis,
                                    double max_condition = 1e10) {
    if (blocks.joint_first.cols() != basis.rows() || blocks.joint_second.cols() != basis.rows()) {
        throw DimensionError("estimate_gamma: basis rows do not match the joint block");
    }
    if (blocks.joint_first.rows() != blocks.arm_second.rows()) {
        throw DimensionError("estimate_gamma: joint and arm blocks have different row counts");
    }
    const Matrix left = blocks.joint_first * basis;
    const Matrix inner = left.transpose() * (blocks.joint_second * basis);
    GammaEstimate out;
    out.condition = condition_number(inner);
    if (!(out.condition < max_condition)) {
        throw ConditioningError("mode " + std::to_string(mode) +
                                    ": loading system is ill-conditioned (rank misspecified or too little data)",
                                out.condition);
    }
    out.gamma = inner.colPivHouseholderQr().solve(left.transpose() * blocks.arm_second);
    return out;
}

struct ModeCheck {
    Index mode = 0;
    Index joint_rank = 0;
    Index arm_rank = 0;
    bool consistent = true;
};

struct GeneralizabilityReport {
    std::vector<ModeCheck> modes;  ///< group modes 1..q
    bool consistent = true;
    std::string verdict() const { return consistent ? "consistent" : "inconsistent"; }
};

/**
 * Compare, per group mode, the eigen-ratio rank of the joint block Gram
 * against that of the arm block Gram. Both Grams are corrected for OLS noise
 * on the diagonal. Eigenvalues are floored at a fraction of the rank threshold
 * so that near-zero and negative noise eigenvalues do not create spurious ratios.
 */
inline GeneralizabilityReport diagnose_generalizability(const GroupEstimates& est, const ObservationPattern& pattern,
                                                        double threshold_c = 1.0) {
    GeneralizabilityReport report;
    const Index p = est.features();
    const double c_eff = threshold_c * noise_scale(est);
    auto beta_of = [&](const GroupIndex& g) -> const Vector& { return est.first_fit(g).beta; };
    for (Index t = 1; t <= static_cast<Index>(pattern.q()); ++t) {
        const auto rows = pattern.arm(t);
        auto corrected_gram = [&](const std::vector<Index>& levels) {
            const Matrix B = stack_block(rows, t, levels, p, beta_of);
            Matrix G = B.transpose() * B / static_cast<double>(rows.size());
            for (std::size_t j = 0; j < levels.size(); ++j) {
                double v = 0.0;
                for (const auto& r : rows) {
                    const OlsFit& f = est.first_fit(insert_level(r, t, levels[j]));
                    v += f.gram_inv.trace() * f.sigma2 / static_cast<double>(f.n);
                }
                G(static_cast<Index>(j), static_cast<Index>(j)) -= v / static_cast<double>(rows.size());
            }
            return Matrix(0.5 * (G + G.transpose()));
        };
        auto ratio_rank = [&](const Matrix& G) -> Index {
            if (G.rows() < 2) return G.rows();
            const auto eig = sorted_eigen(G);
            const double norm = eig.values.cwiseAbs().maxCoeff();
            const double floor =
                std::max(kEigenRatioFloor, kRatioFloorFraction * rank_threshold(norm, G.rows(), std::max(est.n_bar, 2.0),
                                                                                static_cast<Index>(rows.size()), c_eff));
            return eigen_ratio_rank(eig.values, floor);
        };
        ModeCheck m;
        m.mode = t;
        m.joint_rank = ratio_rank(corrected_gram(pattern.body(t)));
        m.arm_rank = ratio_rank(corrected_gram(full_range(pattern.levels(t))));
        m.consistent = m.joint_rank == m.arm_rank;
        report.consistent = report.consistent && m.consistent;
        report.modes.push_back(m);
    }
    return report;
}

/// Fitted completion: bases, loadings, core and the assembled coefficient tensor.
struct CompletionModel {
    ObservationPattern pattern;
    std::vector<Index> ranks;     ///< r_0..r_q
    std::vector<Matrix> bases;    ///< V_t: p x r_0, omega_t x r_t
    std::vector<Matrix> loadings; ///< Gamma_t: r_0 x p, r_t x p_t
    DenseTensor core;             ///< dims (r_0, ..., r_q)
    DenseTensor beta_hat;         ///< dims (p, p_1, ..., p_q)
    SpectralResult spectral;
    std::vector<double> conditions;  ///< condition numbers of the inverted r x r systems
    GeneralizabilityReport generalizability;
    std::vector<std::string> warnings;

    Index features() const { return beta_hat.dim(0); }
    bool generalizable() const { return generalizability.consistent; }
};

/// Body tensor of second-fold estimates, dims (p, omega_1, ..., omega_q).
inline DenseTensor body_tensor(const GroupEstimates& est, const ObservationPattern& pattern) {
    const Index p = est.features();
    std::vector<Index> dims{p};
    for (Index t = 1; t <= static_cast<Index>(pattern.q()); ++t) dims.push_back(pattern.omega(t));
    std::vector<std::vector<Index>> positions;
    for (Index t = 1; t <= static_cast<Index>(pattern.q()); ++t) positions.push_back(full_range(pattern.omega(t)));
    DenseTensor out(dims);
    std::vector<Index> index(dims.size());
    for (const auto& pos : cartesian(positions)) {
        GroupIndex g;
        for (std::size_t k = 0; k < pos.size(); ++k) g.coords.push_back(pattern.body(static_cast<Index>(k) + 1)[static_cast<std::size_t>(pos[k] - 1)]);
        const Vector& b = est.second_fit(g).beta;
        for (std::size_t k = 0; k < pos.size(); ++k) index[k + 1] = pos[k];
        for (Index j = 0; j < p; ++j) {
            index[0] = j + 1;
            out(index) = b[j];
        }
    }
    return out;
}

/// Run spectral step, loading estimation and reassembly on existing fold estimates.
inline CompletionModel complete_from_estimates(const GroupEstimates& est, const ObservationPattern& pattern,
                                               const FitOptions& opts = {}) {
    CompletionModel model;
    model.pattern = pattern;
    model.spectral = spectral_step(est, pattern, opts.threshold_c, opts.rank_override);
    model.ranks = model.spectral.ranks();
    model.warnings = model.spectral.warnings();
    const auto q = static_cast<Index>(pattern.q());
    for (Index t = 0; t <= q; ++t) {
        const Matrix& basis = model.spectral.modes[static_cast<std::size_t>(t)].basis;
        auto g = estimate_gamma(t, unfold_blocks(est, pattern, t), basis, opts.max_condition);
        model.bases.push_back(basis);
        model.loadings.push_back(std::move(g.gamma));
        model.conditions.push_back(g.condition);
    }
    model.core = body_tensor(est, pattern);
    for (Index t = 0; t <= q; ++t) model.core = mode_product(model.core, model.bases[static_cast<std::size_t>(t)], t);
    model.beta_hat = tucker_assemble(model.core, model.loadings);

    if (opts.keep_observed_ols) {
        const Index p = est.features();
        std::vector<Index> index(static_cast<std::size_t>(q) + 1);
        for (const auto& g : pattern.observed()) {
            const Vector& b = est.second_fit(g).beta;
            for (Index k = 0; k < q; ++k) index[static_cast<std::size_t>(k) + 1] = g[static_cast<std::size_t>(k)];
            for (Index j = 0; j < p; ++j) {
                index[0] = j + 1;
                model.beta_hat(index) = b[j];
            }
        }
    }

    model.generalizability = diagnose_generalizability(est, pattern, opts.threshold_c);
    if (!model.generalizability.consistent) {
        model.warnings.push_back("model not generalizable: joint and arm ranks disagree");
    }
    return model;
}

/// Full pipeline: per-group OLS, spectral step, loadings, reassembly.
inline CompletionModel fit_tensordg(const GroupedDataset& ds, const ObservationPattern& pattern,
                                    const FitOptions& opts = {}) {
    GroupEstimates est;
    try {
        est = fit_all(ds, pattern, opts.split, opts.seed);
    } catch (const ConditioningError& e) {
        throw ConditioningError(std::string("regression stage: ") + e.what(), e.condition());
    } catch (const DimensionError& e) {
        throw DimensionError(std::string("regression stage: ") + e.what());
    } catch (const RangeError& e) {
        throw RangeError(std::string("regression stage: ") + e.what());
    }
    try {
        return complete_from_estimates(est, pattern, opts);
    } catch (const ConditioningError& e) {
        throw ConditioningError(std::string("completion stage: ") + e.what(), e.condition());
    }
}

/// beta_hat at group g.
inline Vector coefficient(const CompletionModel& model, const GroupIndex& g) {
    model.pattern.check_in_space(g);
    const Index p = model.features();
    std::vector<Index> index{1};
    index.insert(index.end(), g.coords.begin(), g.coords.end());
    Vector out(p);
    for (Index j = 0; j < p; ++j) {
        index[0] = j + 1;
        out[j] = model.beta_hat(index);
    }
    return out;
}

inline double predict(const CompletionModel& model, const GroupIndex& g, const Vector& x) {
    if (x.size() != model.features()) throw DimensionError("predict: feature vector has the wrong length");
    return x.dot(coefficient(model, g));
}

}  // namespace tensordg
