#pragma once

#include <cmath>

#include "errors.hpp"
#include "index_sets.hpp"
#include "simgen.hpp"
#include "tensor.hpp"

namespace tensordg {

/// ||beta_hat - beta|| / sqrt(|G|), where |G| counts the groups.
inline double al2e(const DenseTensor& estimate, const DenseTensor& truth) {
    if (estimate.dims() != truth.dims()) throw DimensionError("al2e: tensors have different dimensions");
    const double groups = static_cast<double>(truth.size() / truth.dim(0));
    return (estimate.data() - truth.data()).norm() / std::sqrt(groups);
}

/// Root mean squared coefficient error over the unobserved groups.
inline double adge(const DenseTensor& estimate, const DenseTensor& truth, const ObservationPattern& pattern) {
    if (estimate.dims() != truth.dims()) throw DimensionError("adge: tensors have different dimensions");
    const auto unseen = pattern.unobserved();
    if (unseen.empty()) throw DimensionError("adge: every group is observed");
    double s = 0.0;
    for (const auto& g : unseen) s += (group_slice(estimate, g) - group_slice(truth, g)).squaredNorm();
    return std::sqrt(s / static_cast<double>(unseen.size()));
}

inline double tle(const Vector& estimate, const Vector& target) {
    if (estimate.size() != target.size()) throw DimensionError("tle: vectors have different lengths");
    return (estimate - target).norm();
}

}  // namespace tensordg
