#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "index_sets.hpp"
#include "regress.hpp"
#include "tensor.hpp"

namespace tensordg {

enum class DesignCovariance { identity, ar1 };

inline constexpr double kRankCheckTolDefault = 1e-6;

/// Synthetic scenario. Defaults are the standard desk-scale design.
struct ScenarioConfig {
    std::vector<Index> dims{60, 8, 8};   ///< (p, p_1, ..., p_q)
    std::vector<Index> ranks{6, 3, 3};   ///< (r_0, r_1, ..., r_q)
    std::vector<Index> body_sizes{5, 5}; ///< omega_t: Omega_t = {1..omega_t}
    std::vector<Index> arm_sizes{5, 5};  ///< arm t uses S_k = {1..a_t} for every k != t
    Index n = 300;                       ///< samples per observed group
    Index n_target = 300;                ///< samples per unobserved group (evaluation / transfer)
    double noise_std = 1.0;
    DesignCovariance covariance = DesignCovariance::identity;
    double rho = 0.5;                    ///< AR(1) correlation
    Index delta_sparsity = 0;            ///< nonzeros of the target perturbation
    double delta_std = 0.5;              ///< perturbation entries ~ N(0, delta_std^2)
    double signal_scale = 2.0;           ///< multiplies the core
    bool balanced_core = true;           ///< whiten every core unfolding to a flat spectrum
    double min_block_ratio = 0.5;        ///< required sigma_r / sigma_1 of body and joint unfoldings
    int max_draws = 1000;
    std::uint64_t seed = 1;

    Index q() const { return static_cast<Index>(dims.size()) - 1; }
    Index features() const { return dims.front(); }

    void validate() const {
        if (dims.size() < 2) throw ConfigError("scenario needs a feature mode and at least one group mode");
        const auto qq = static_cast<std::size_t>(q());
        if (ranks.size() != dims.size()) throw ConfigError("ranks must have one entry per mode");
        if (body_sizes.size() != qq || arm_sizes.size() != qq) {
            throw ConfigError("body_sizes and arm_sizes need one entry per group mode");
        }
        for (std::size_t t = 0; t < dims.size(); ++t) {
            if (dims[t] < 1 || ranks[t] < 1) throw ConfigError("dims and ranks must be positive");
            if (ranks[t] > dims[t]) throw ConfigError("rank exceeds dimension in mode " + std::to_string(t));
        }
        Index prod_all = 1;
        for (Index r : ranks) prod_all *= r;
        for (std::size_t t = 0; t < dims.size(); ++t) {
            if (ranks[t] * ranks[t] > prod_all) {
                throw ConfigError("rank of mode " + std::to_string(t) + " exceeds the product of the other ranks");
            }
        }
        for (std::size_t t = 0; t < qq; ++t) {
            if (body_sizes[t] < 1 || body_sizes[t] > dims[t + 1]) throw ConfigError("body size out of range");
            if (ranks[t + 1] > body_sizes[t]) throw ConfigError("group rank exceeds body size");
            if (arm_sizes[t] < 1) throw ConfigError("arm size must be positive");
            for (std::size_t k = 0; k < qq; ++k) {
                if (k != t && arm_sizes[t] > dims[k + 1]) throw ConfigError("arm size exceeds a group dimension");
            }
        }
        if (ranks[0] > dims[0]) throw ConfigError("feature rank exceeds p");
        if (n < 1 || n_target < 1) throw ConfigError("sample sizes must be positive");
        if (noise_std < 0.0 || delta_std < 0.0) throw ConfigError("standard deviations must be nonnegative");
        if (delta_sparsity < 0 || delta_sparsity > dims[0]) throw ConfigError("delta_sparsity must lie in [0, p]");
        if (covariance == DesignCovariance::ar1 && !(std::abs(rho) < 1.0)) throw ConfigError("AR(1) rho must lie in (-1, 1)");
    }
};

/// Body {1..omega_t} and arms with S_k = {1..a_t}.
inline ObservationPattern default_pattern(const ScenarioConfig& cfg) {
    const auto q = static_cast<std::size_t>(cfg.q());
    std::vector<Index> space(cfg.dims.begin() + 1, cfg.dims.end());
    std::vector<std::vector<Index>> body;
    for (std::size_t t = 0; t < q; ++t) body.push_back(full_range(cfg.body_sizes[t]));
    std::vector<std::vector<std::vector<Index>>> arms(q);
    for (std::size_t t = 0; t < q; ++t) {
        for (std::size_t k = 0; k < q; ++k) {
            if (k != t) arms[t].push_back(full_range(cfg.arm_sizes[t]));
        }
    }
    return ObservationPattern::build(std::move(space), std::move(body), std::move(arms));
}

inline Matrix gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    }
    return m;
}

/// rows x cols matrix with orthonormal columns (Q factor of a Gaussian matrix).
inline Matrix random_orthonormal(Index rows, Index cols, std::mt19937_64& rng) {
    const Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(rows, cols, rng));
    return qr.householderQ() * Matrix::Identity(rows, cols);
}

inline constexpr double kRankCheckTol = kRankCheckTolDefault;

/// sigma_r / sigma_1 of an unfolding; 0 when the rank exceeds r at tolerance `tol`.
inline double rank_ratio(const Matrix& unfolding, Index r, double tol = kRankCheckTol) {
    const Vector sv = Eigen::BDCSVD<Matrix>(unfolding).singularValues();
    if (sv.size() < r || !(sv[0] > 0.0)) return 0.0;
    if (sv.size() > r && sv[r] > tol * sv[0]) return 0.0;
    return sv[r - 1] / sv[0];
}

/**
 * Smallest sigma_r / sigma_1 over the unfoldings that exact completion needs:
 * every mode of the body block, and mode t of each joint block A_t x Omega_t.
 */
inline double structure_ratio(const DenseTensor& beta, const ObservationPattern& pattern,
                              const std::vector<Index>& ranks) {
    const auto q = static_cast<Index>(pattern.q());
    std::vector<std::vector<Index>> body_levels{full_range(beta.dim(0))};
    for (Index t = 1; t <= q; ++t) body_levels.push_back(pattern.body(t));
    const DenseTensor body = subtensor(beta, body_levels);
    double worst = rank_ratio(matricize(body, 0), ranks[0]);
    for (Index t = 1; t <= q; ++t) {
        const Index r = ranks[static_cast<std::size_t>(t)];
        worst = std::min(worst, rank_ratio(matricize(body, t), r));
        std::vector<std::vector<Index>> joint{full_range(beta.dim(0))};
        const auto& gens = pattern.arm_generators(t);
        std::size_t j = 0;
        for (Index k = 1; k <= q; ++k) joint.push_back(k == t ? pattern.body(t) : gens[j++]);
        worst = std::min(worst, rank_ratio(matricize(subtensor(beta, joint), t), r));
    }
    return worst;
}

/// Body and joint sub-blocks carry the full ranks and the whole tensor has Tucker rank `ranks`.
inline bool satisfies_structure(const DenseTensor& beta, const ObservationPattern& pattern,
                                const std::vector<Index>& ranks, double min_ratio = kRankCheckTol) {
    return structure_ratio(beta, pattern, ranks) > std::max(min_ratio, kRankCheckTol) &&
           tucker_ranks(beta, kRankCheckTol) == ranks;
}

/// Alternate per-mode whitening so that every unfolding has equal singular values.
inline DenseTensor balance_core(DenseTensor core, int sweeps = 50) {
    const double norm = core.frobenius_norm();
    for (int s = 0; s < sweeps; ++s) {
        for (Index t = 0; t < core.order(); ++t) {
            const Matrix m = matricize(core, t);
            const Eigen::SelfAdjointEigenSolver<Matrix> eig(m * m.transpose());
            const Matrix whiten = eig.eigenvectors() * eig.eigenvalues().cwiseMax(1e-300).cwiseInverse().cwiseSqrt().asDiagonal() *
                                  eig.eigenvectors().transpose();
            core = dematricize(whiten * m, t, core.dims());
        }
    }
    core.data() *= norm / core.frobenius_norm();
    return core;
}

/**
 * Low-Tucker-rank coefficient tensor: Gaussian core of dims `ranks` (optionally
 * balanced), times orthonormal-column factors from QR of Gaussian matrices.
 * Redrawn up to `max_draws` times until the body and joint sub-blocks carry the
 * full ranks with sigma_r / sigma_1 above `min_block_ratio`.
 */
inline DenseTensor generate_tensor(const ScenarioConfig& cfg, const ObservationPattern& pattern, std::uint64_t seed) {
    cfg.validate();
    for (int attempt = 0; attempt < std::max(cfg.max_draws, 1); ++attempt) {
        std::mt19937_64 rng(derive_seed(seed, {0x7465'6e73ULL, static_cast<std::uint64_t>(attempt)}));
        const std::vector<Index>& core_dims = cfg.ranks;
        DenseTensor core(core_dims, gaussian_matrix(DenseTensor::element_count(core_dims), 1, rng).col(0));
        if (cfg.balanced_core) core = balance_core(std::move(core));
        core.data() *= cfg.signal_scale;
        std::vector<Matrix> factors;
        for (std::size_t t = 0; t < cfg.dims.size(); ++t) {
            factors.push_back(random_orthonormal(cfg.dims[t], cfg.ranks[t], rng).transpose());
        }
        DenseTensor beta = tucker_assemble(core, factors);
        if (satisfies_structure(beta, pattern, cfg.ranks, cfg.min_block_ratio)) return beta;
    }
    throw ConfigError("could not draw a tensor whose sub-blocks carry the configured ranks");
}

inline DenseTensor generate_tensor(const ScenarioConfig& cfg, std::uint64_t seed) {
    return generate_tensor(cfg, default_pattern(cfg), seed);
}

/// beta(g) as a p-vector.
inline Vector group_slice(const DenseTensor& beta, const GroupIndex& g) {
    const Index p = beta.dim(0);
    std::vector<Index> index{1};
    index.insert(index.end(), g.coords.begin(), g.coords.end());
    Vector out(p);
    for (Index j = 0; j < p; ++j) {
        index[0] = j + 1;
        out[j] = beta(index);
    }
    return out;
}

inline Matrix design_cholesky(const ScenarioConfig& cfg) {
    const Index p = cfg.features();
    if (cfg.covariance == DesignCovariance::identity) return Matrix::Identity(p, p);
    Matrix sigma(p, p);
    for (Index i = 0; i < p; ++i) {
        for (Index j = 0; j < p; ++j) sigma(i, j) = std::pow(cfg.rho, static_cast<double>(std::abs(i - j)));
    }
    return Eigen::LLT<Matrix>(sigma).matrixL();
}

/// n rows of x ~ N(0, Sigma), y = X beta + noise.
inline GroupData draw_group(const Vector& beta, Index n, const ScenarioConfig& cfg, const Matrix& chol,
                            std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Index p = beta.size();
    Matrix Z = gaussian_matrix(n, p, rng);
    GroupData d;
    d.X = cfg.covariance == DesignCovariance::identity ? std::move(Z) : Matrix(Z * chol.transpose());
    d.y = d.X * beta;
    if (cfg.noise_std > 0.0) d.y += cfg.noise_std * gaussian_matrix(n, 1, rng).col(0);
    return d;
}

/// gamma = beta + delta with exactly delta_sparsity nonzero entries.
inline Vector inject_delta(const Vector& beta, const ScenarioConfig& cfg, std::uint64_t seed) {
    if (cfg.delta_sparsity < 0 || cfg.delta_sparsity > beta.size()) {
        throw ConfigError("delta_sparsity must lie in [0, p]");
    }
    std::mt19937_64 rng(seed);
    std::vector<Index> coords(static_cast<std::size_t>(beta.size()));
    for (Index j = 0; j < beta.size(); ++j) coords[static_cast<std::size_t>(j)] = j;
    std::normal_distribution<double> normal(0.0, cfg.delta_std);
    Vector gamma = beta;
    for (Index k = 0; k < cfg.delta_sparsity; ++k) {
        std::uniform_int_distribution<Index> pick(k, beta.size() - 1);
        std::swap(coords[static_cast<std::size_t>(k)], coords[static_cast<std::size_t>(pick(rng))]);
        double v = 0.0;
        while (v == 0.0) v = normal(rng);
        gamma[coords[static_cast<std::size_t>(k)]] += v;
    }
    return gamma;
}

struct Scenario {
    DenseTensor truth;
    ObservationPattern pattern;
    GroupedDataset train;                   ///< observed groups
    GroupedDataset eval;                    ///< unobserved groups, drawn from their targets
    std::map<GroupIndex, Vector> targets;   ///< gamma for unobserved groups (beta when no perturbation)
};

/// Training data for every observed group and target data for the rest.
inline Scenario generate_data(const DenseTensor& beta, const ObservationPattern& pattern, const ScenarioConfig& cfg,
                              std::uint64_t seed) {
    Scenario s;
    s.truth = beta;
    s.pattern = pattern;
    s.train = GroupedDataset(beta.dim(0));
    s.eval = GroupedDataset(beta.dim(0));
    const Matrix chol = design_cholesky(cfg);
    for (const auto& g : pattern.all_groups()) {
        const Vector b = group_slice(beta, g);
        const std::uint64_t key = group_key(g);
        if (pattern.observed().contains(g)) {
            auto d = draw_group(b, cfg.n, cfg, chol, derive_seed(seed, {0x7472'6169ULL, key}));
            s.train.add(g, std::move(d.X), std::move(d.y));
        } else {
            Vector gamma = inject_delta(b, cfg, derive_seed(seed, {0x6465'6c74ULL, key}));
            auto d = draw_group(gamma, cfg.n_target, cfg, chol, derive_seed(seed, {0x6576'616cULL, key}));
            s.eval.add(g, std::move(d.X), std::move(d.y));
            s.targets.emplace(g, std::move(gamma));
        }
    }
    return s;
}

/// Tensor and data for one replication of the configured design.
inline Scenario generate_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
    const ObservationPattern pattern = default_pattern(cfg);
    const DenseTensor beta = generate_tensor(cfg, pattern, derive_seed(seed, {1}));
    return generate_data(beta, pattern, cfg, derive_seed(seed, {2}));
}

}  // namespace tensordg
