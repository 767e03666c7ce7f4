#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace tensordg {

/// Group coordinates (i_1, ..., i_q), 1-based.
struct GroupIndex {
    std::vector<Index> coords;

    GroupIndex() = default;
    GroupIndex(std::initializer_list<Index> c) : coords(c) {}
    explicit GroupIndex(std::vector<Index> c) : coords(std::move(c)) {}

    std::size_t size() const noexcept { return coords.size(); }
    Index operator[](std::size_t k) const { return coords[k]; }
    Index& operator[](std::size_t k) { return coords[k]; }

    auto operator<=>(const GroupIndex&) const = default;
    bool operator==(const GroupIndex&) const = default;

    std::string to_string() const {
        std::string s;
        for (std::size_t k = 0; k < coords.size(); ++k) {
            if (k) s += ',';
            s += std::to_string(coords[k]);
        }
        return s;
    }
};

/// Tuple of the q-1 coordinates other than mode t; same ordering rules.
using PartialIndex = GroupIndex;

/// Group obtained by inserting `level` at mode t (1-based) into a (q-1)-tuple.
inline GroupIndex insert_level(const PartialIndex& rest, Index mode, Index level) {
    GroupIndex g;
    g.coords.reserve(rest.size() + 1);
    const auto pos = static_cast<std::size_t>(mode - 1);
    for (std::size_t k = 0; k < rest.size() + 1; ++k) {
        if (k == pos) g.coords.push_back(level);
        else g.coords.push_back(rest.coords[k < pos ? k : k - 1]);
    }
    return g;
}

/// Drop the coordinate of mode t (1-based).
inline PartialIndex drop_level(const GroupIndex& g, Index mode) {
    PartialIndex rest;
    rest.coords.reserve(g.size() - 1);
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (static_cast<Index>(k) + 1 != mode) rest.coords.push_back(g[k]);
    }
    return rest;
}

/// All tuples of the Cartesian product of the given level lists, lexicographic.
inline std::vector<GroupIndex> cartesian(const std::vector<std::vector<Index>>& factors) {
    std::vector<GroupIndex> out;
    for (const auto& f : factors) {
        if (f.empty()) return out;
    }
    std::vector<std::size_t> pos(factors.size(), 0);
    while (true) {
        GroupIndex g;
        g.coords.reserve(factors.size());
        for (std::size_t k = 0; k < factors.size(); ++k) g.coords.push_back(factors[k][pos[k]]);
        out.push_back(std::move(g));
        std::size_t k = factors.size();
        while (k > 0) {
            --k;
            if (++pos[k] < factors[k].size()) break;
            pos[k] = 0;
            if (k == 0) return out;
        }
        if (factors.empty()) return out;
    }
}

inline std::vector<Index> full_range(Index n) {
    std::vector<Index> r(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = i + 1;
    return r;
}

enum class BlockKind {
    body,      ///< Omega = Omega_1 x ... x Omega_q
    arm_full,  ///< A_t extended by the whole axis [p_t]
    joint,     ///< A_t extended by Omega_t
    cset,      ///< C_t = Omega_{-t} u A_t, extended by Omega_t
};

/**
 * Group space [p_1] x ... x [p_q] with a declared body set and q arm sets.
 *
 * Arm t is the product of per-mode generating subsets S_k, k != t. The
 * observed set is the union of the body and every arm extended along its
 * free axis, plus any extra groups registered with add_observed().
 */
class ObservationPattern {
public:
    ObservationPattern() = default;

    /**
     * @param space  level counts (p_1, ..., p_q)
     * @param body   Omega_t for t = 1..q
     * @param arms   for each t, the q-1 generating subsets S_k (k != t, increasing k)
     */
    static ObservationPattern build(std::vector<Index> space, std::vector<std::vector<Index>> body,
                                    std::vector<std::vector<std::vector<Index>>> arms) {
        ObservationPattern p;
        const std::size_t q = space.size();
        if (q == 0) throw ConfigError("pattern needs at least one group mode");
        for (Index s : space) {
            if (s < 1) throw ConfigError("group space dims must be positive");
        }
        if (body.size() != q) throw ConfigError("body needs one subset per group mode");
        if (arms.size() != q) throw ConfigError("arms need one entry per group mode");

        p.space_ = std::move(space);
        for (std::size_t t = 0; t < q; ++t) {
            p.body_.push_back(normalize_subset(body[t], p.space_[t], "body subset for mode " + std::to_string(t + 1)));
        }
        for (std::size_t t = 0; t < q; ++t) {
            if (arms[t].size() != q - 1) {
                throw ConfigError("arm " + std::to_string(t + 1) + " needs " + std::to_string(q - 1) +
                                  " generating subsets");
            }
            std::vector<std::vector<Index>> gens;
            std::size_t j = 0;
            for (std::size_t k = 0; k < q; ++k) {
                if (k == t) continue;
                gens.push_back(normalize_subset(arms[t][j++], p.space_[k],
                                                "arm " + std::to_string(t + 1) + " subset for mode " +
                                                    std::to_string(k + 1)));
            }
            p.arms_.push_back(std::move(gens));
        }

        for (const auto& g : cartesian(p.body_)) p.observed_.insert(g);
        for (Index t = 1; t <= static_cast<Index>(q); ++t) {
            for (const auto& g : p.block(BlockKind::arm_full, t)) p.observed_.insert(g);
        }
        return p;
    }

    std::size_t q() const noexcept { return space_.size(); }
    const std::vector<Index>& space() const noexcept { return space_; }
    Index levels(Index mode) const { return space_.at(static_cast<std::size_t>(mode - 1)); }

    /// Omega_t, sorted.
    const std::vector<Index>& body(Index mode) const { return body_.at(static_cast<std::size_t>(mode - 1)); }

    /// Generating subsets S_k (k != t) of arm t.
    const std::vector<std::vector<Index>>& arm_generators(Index mode) const {
        return arms_.at(static_cast<std::size_t>(mode - 1));
    }

    /// A_t as (q-1)-tuples, lexicographic.
    std::vector<PartialIndex> arm(Index mode) const { return cartesian(arm_generators(checked(mode))); }

    /// Omega_{-t} as (q-1)-tuples.
    std::vector<PartialIndex> body_minus(Index mode) const {
        checked(mode);
        std::vector<std::vector<Index>> f;
        for (std::size_t k = 0; k < q(); ++k) {
            if (static_cast<Index>(k) + 1 != mode) f.push_back(body_[k]);
        }
        return cartesian(f);
    }

    /// C_t = Omega_{-t} u A_t with duplicates removed, lexicographic.
    std::vector<PartialIndex> cset(Index mode) const {
        std::set<PartialIndex> s;
        for (auto& g : body_minus(mode)) s.insert(std::move(g));
        for (auto& g : arm(mode)) s.insert(std::move(g));
        return {s.begin(), s.end()};
    }

    Index omega(Index mode) const { return static_cast<Index>(body(checked(mode)).size()); }
    Index arm_size(Index mode) const { return static_cast<Index>(arm(mode).size()); }

    /// Groups of the requested block, lexicographic over coordinates.
    std::vector<GroupIndex> block(BlockKind kind, Index mode = 0) const {
        if (kind == BlockKind::body) return cartesian(body_);
        checked(mode);
        std::vector<PartialIndex> rows;
        std::vector<Index> levels;
        switch (kind) {
            case BlockKind::arm_full:
                rows = arm(mode);
                levels = full_range(this->levels(mode));
                break;
            case BlockKind::joint:
                rows = arm(mode);
                levels = body(mode);
                break;
            case BlockKind::cset:
                rows = cset(mode);
                levels = body(mode);
                break;
            default:
                throw ConfigError("unknown block kind");
        }
        std::vector<GroupIndex> out;
        out.reserve(rows.size() * levels.size());
        for (const auto& r : rows) {
            for (Index l : levels) out.push_back(insert_level(r, mode, l));
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    const std::set<GroupIndex>& observed() const noexcept { return observed_; }
    std::vector<GroupIndex> observed_list() const { return {observed_.begin(), observed_.end()}; }
    Index observed_count() const noexcept { return static_cast<Index>(observed_.size()); }

    /// Every group of the space, lexicographic.
    std::vector<GroupIndex> all_groups() const {
        std::vector<std::vector<Index>> f;
        for (Index s : space_) f.push_back(full_range(s));
        return cartesian(f);
    }

    std::vector<GroupIndex> unobserved() const {
        std::vector<GroupIndex> out;
        for (auto& g : all_groups()) {
            if (!observed_.contains(g)) out.push_back(std::move(g));
        }
        return out;
    }

    void check_in_space(const GroupIndex& g) const {
        if (g.size() != q()) {
            throw RangeError("group index " + g.to_string() + " has " + std::to_string(g.size()) +
                             " coordinates, expected " + std::to_string(q()));
        }
        for (std::size_t k = 0; k < q(); ++k) {
            if (g[k] < 1 || g[k] > space_[k]) {
                throw RangeError("group index " + g.to_string() + " outside the group space");
            }
        }
    }

    bool is_observed(const GroupIndex& g) const {
        check_in_space(g);
        return observed_.contains(g);
    }

    /// Register an observed group beyond the declared body and arms.
    void add_observed(const GroupIndex& g) {
        check_in_space(g);
        observed_.insert(g);
    }

    /// Linear index of g in the group space (last mode fastest, 0-based).
    Index linear_index(const GroupIndex& g) const {
        check_in_space(g);
        Index off = 0;
        for (std::size_t k = 0; k < q(); ++k) off = off * space_[k] + (g[k] - 1);
        return off;
    }

    bool operator==(const ObservationPattern&) const = default;

private:
    Index checked(Index mode) const {
        if (mode < 1 || mode > static_cast<Index>(q())) {
            throw RangeError("group mode " + std::to_string(mode) + " out of range [1," + std::to_string(q()) + "]");
        }
        return mode;
    }

    static std::vector<Index> normalize_subset(std::vector<Index> s, Index limit, const std::string& what) {
        if (s.empty()) throw ConfigError(what + " is empty");
        for (Index v : s) {
            if (v < 1 || v > limit) {
                throw ConfigError(what + " has level " + std::to_string(v) + " outside [1," + std::to_string(limit) + "]");
            }
        }
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        return s;
    }

    std::vector<Index> space_;
    std::vector<std::vector<Index>> body_;
    std::vector<std::vector<std::vector<Index>>> arms_;
    std::set<GroupIndex> observed_;
};

}  // namespace tensordg
