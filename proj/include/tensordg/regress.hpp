#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "index_sets.hpp"
#include "tensor.hpp"

namespace tensordg {

struct GroupData {
    Matrix X;
    Vector y;

    Index samples() const noexcept { return X.rows(); }
};

/// Per-group design and response, sharing a feature dimension.
class GroupedDataset {
public:
    GroupedDataset() = default;
    explicit GroupedDataset(Index features) : features_(features) {}

    void add(const GroupIndex& g, Matrix X, Vector y) {
        if (X.rows() < 1) throw DimensionError("group " + g.to_string() + " has no samples");
        if (X.rows() != y.size()) {
            throw DimensionError("group " + g.to_string() + ": X has " + std::to_string(X.rows()) +
                                 " rows but y has " + std::to_string(y.size()));
        }
        if (features_ < 0) features_ = X.cols();
        if (X.cols() != features_) {
            throw DimensionError("group " + g.to_string() + " has " + std::to_string(X.cols()) +
                                 " features, dataset has " + std::to_string(features_));
        }
        groups_[g] = GroupData{std::move(X), std::move(y)};
    }

    bool contains(const GroupIndex& g) const { return groups_.contains(g); }
    const GroupData& at(const GroupIndex& g) const {
        auto it = groups_.find(g);
        if (it == groups_.end()) throw RangeError("no data for group " + g.to_string());
        return it->second;
    }

    Index features() const noexcept { return features_; }
    std::size_t size() const noexcept { return groups_.size(); }
    bool empty() const noexcept { return groups_.empty(); }

    auto begin() const { return groups_.begin(); }
    auto end() const { return groups_.end(); }

    /// Copy restricted to the given feature columns.
    GroupedDataset select_features(const std::vector<Index>& columns) const {
        GroupedDataset out(static_cast<Index>(columns.size()));
        for (const auto& [g, d] : groups_) {
            Matrix X(d.X.rows(), static_cast<Index>(columns.size()));
            for (std::size_t j = 0; j < columns.size(); ++j) X.col(static_cast<Index>(j)) = d.X.col(columns[j]);
            out.add(g, std::move(X), d.y);
        }
        return out;
    }

    friend bool operator==(const GroupedDataset& a, const GroupedDataset& b) {
        if (a.features_ != b.features_ || a.groups_.size() != b.groups_.size()) return false;
        for (auto ia = a.groups_.begin(), ib = b.groups_.begin(); ia != a.groups_.end(); ++ia, ++ib) {
            if (ia->first != ib->first) return false;
            if (ia->second.X.rows() != ib->second.X.rows()) return false;
            if (ia->second.X != ib->second.X || ia->second.y != ib->second.y) return false;
        }
        return true;
    }

private:
    Index features_ = -1;
    std::map<GroupIndex, GroupData> groups_;
};

struct OlsFit {
    Vector beta;
    Matrix gram;      ///< X^T X / n
    Matrix gram_inv;  ///< (X^T X / n)^{-1}
    double sigma2 = 0.0;
    Index n = 0;
};

/// Smallest-to-largest eigenvalue ratio below which a Gram is treated as singular.
inline constexpr double kGramConditionFloor = 1e-10;

/**
 * Least squares with noise variance ||y - X b||^2 / (n - p).
 *
 * Solved through a pivoted LDL^T of the sample Gram; the inverse is kept for
 * the bias corrections of the spectral step.
 */
inline OlsFit ols_fit(const Matrix& X, const Vector& y) {
    const Index n = X.rows();
    const Index p = X.cols();
    if (y.size() != n) throw DimensionError("ols_fit: X and y row counts differ");
    if (n <= p) {
        throw DimensionError("ols_fit needs more samples than features (n=" + std::to_string(n) +
                             ", p=" + std::to_string(p) + ")");
    }
    OlsFit fit;
    fit.n = n;
    fit.gram = X.transpose() * X / static_cast<double>(n);
    const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(fit.gram, Eigen::EigenvaluesOnly).eigenvalues();
    const double emax = eig.maxCoeff();
    const double emin = eig.minCoeff();
    if (!(emax > 0.0) || emin <= kGramConditionFloor * emax) {
        throw ConditioningError("sample Gram is singular or ill-conditioned",
                                emin > 0.0 ? emax / emin : std::numeric_limits<double>::infinity());
    }
    const Eigen::LDLT<Matrix> ldlt(fit.gram);
    fit.beta = ldlt.solve(X.transpose() * y / static_cast<double>(n));
    fit.gram_inv = ldlt.solve(Matrix::Identity(p, p));
    fit.gram_inv = 0.5 * (fit.gram_inv + fit.gram_inv.transpose()).eval();
    const double rss = (y - X * fit.beta).squaredNorm();
    fit.sigma2 = std::max(0.0, rss / static_cast<double>(n - p));
    return fit;
}

// splitmix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix_seed(base);
    for (std::uint64_t v : path) s = mix_seed(s ^ mix_seed(v + 0x632be59bd9b4e019ULL));
    return s;
}

inline std::uint64_t group_key(const GroupIndex& g) {
    std::uint64_t h = 0x84222325cbf29ce4ULL;
    for (Index c : g.coords) h = mix_seed(h ^ static_cast<std::uint64_t>(c));
    return h;
}

/// Row indices of the two folds for one group; fold sizes differ by at most one.
inline std::pair<std::vector<Index>, std::vector<Index>> split_indices(Index n, std::uint64_t seed) {
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng(seed);
    // Fisher-Yates with explicit rejection so the permutation is library-independent.
    for (Index i = n - 1; i > 0; --i) {
        const std::uint64_t range = static_cast<std::uint64_t>(i) + 1;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % range;
        std::uint64_t r = 0;
        do {
            r = rng();
        } while (r >= limit);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(r % range)]);
    }
    const auto half = static_cast<std::size_t>((n + 1) / 2);
    std::vector<Index> first(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<Index> second(perm.begin() + static_cast<std::ptrdiff_t>(half), perm.end());
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
    return {std::move(first), std::move(second)};
}

inline GroupData take_rows(const GroupData& d, const std::vector<Index>& rows) {
    GroupData out{Matrix(static_cast<Index>(rows.size()), d.X.cols()), Vector(static_cast<Index>(rows.size()))};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.X.row(static_cast<Index>(i)) = d.X.row(rows[i]);
        out.y[static_cast<Index>(i)] = d.y[rows[i]];
    }
    return out;
}

/// Two disjoint folds per group, about half the rows each, deterministic in the seed.
inline std::pair<GroupedDataset, GroupedDataset> split_sample(const GroupedDataset& ds, std::uint64_t seed) {
    GroupedDataset first(ds.features());
    GroupedDataset second(ds.features());
    for (const auto& [g, d] : ds) {
        if (d.samples() < 2 * (ds.features() + 1)) {
            throw DimensionError("group " + g.to_string() + " has " + std::to_string(d.samples()) +
                                 " samples; splitting needs at least " + std::to_string(2 * (ds.features() + 1)));
        }
        auto [a, b] = split_indices(d.samples(), derive_seed(seed, {group_key(g)}));
        auto fa = take_rows(d, a);
        auto fb = take_rows(d, b);
        first.add(g, std::move(fa.X), std::move(fa.y));
        second.add(g, std::move(fb.X), std::move(fb.y));
    }
    return {std::move(first), std::move(second)};
}

/// OLS fits for both folds. Without splitting both folds hold the full-sample fit.
struct GroupEstimates {
    std::map<GroupIndex, OlsFit> first;   ///< fold used for the spectral step
    std::map<GroupIndex, OlsFit> second;  ///< fold used for loadings and the core
    double n_bar = 0.0;                   ///< mean first-fold sample size
    bool split = false;

    const OlsFit& first_fit(const GroupIndex& g) const { return lookup(first, g); }
    const OlsFit& second_fit(const GroupIndex& g) const { return lookup(second, g); }
    Index features() const { return first.empty() ? 0 : first.begin()->second.beta.size(); }

private:
    static const OlsFit& lookup(const std::map<GroupIndex, OlsFit>& m, const GroupIndex& g) {
        auto it = m.find(g);
        if (it == m.end()) throw RangeError("no OLS estimate for group " + g.to_string());
        return it->second;
    }
};

namespace detail {

inline OlsFit fit_group(const GroupIndex& g, const GroupData& d) {
    try {
        return ols_fit(d.X, d.y);
    } catch (const ConditioningError& e) {
        throw ConditioningError("group " + g.to_string() + ": " + e.what(), e.condition());
    } catch (const DimensionError& e) {
        throw DimensionError("group " + g.to_string() + ": " + e.what());
    }
}

}  // namespace detail

/// Fit every observed group of the pattern.
inline GroupEstimates fit_all(const GroupedDataset& ds, const ObservationPattern& pattern, bool split,
                              std::uint64_t seed) {
    for (const auto& g : pattern.observed()) {
        if (!ds.contains(g)) throw RangeError("observed group " + g.to_string() + " has no data");
    }
    GroupEstimates est;
    est.split = split;
    double total = 0.0;
    for (const auto& g : pattern.observed()) {
        const GroupData& d = ds.at(g);
        if (split) {
            if (d.samples() < 2 * (ds.features() + 1)) {
                throw DimensionError("group " + g.to_string() + " has too few samples to split");
            }
            auto [a, b] = split_indices(d.samples(), derive_seed(seed, {group_key(g)}));
            est.first.emplace(g, detail::fit_group(g, take_rows(d, a)));
            est.second.emplace(g, detail::fit_group(g, take_rows(d, b)));
        } else {
            auto fit = detail::fit_group(g, d);
            est.second.emplace(g, fit);
            est.first.emplace(g, std::move(fit));
        }
        total += static_cast<double>(est.first.at(g).n);
    }
    est.n_bar = est.first.empty() ? 0.0 : total / static_cast<double>(est.first.size());
    return est;
}

}  // namespace tensordg
