#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace tensordg {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/**
 * Dense tensor of arbitrary order.
 *
 * Entries are stored lexicographically with the last mode varying fastest.
 * Public element access is 1-based; mode numbers run from 0 to order()-1.
 * For a coefficient tensor mode 0 is the feature axis and modes 1..q are the
 * group axes.
 */
class DenseTensor {
public:
    DenseTensor() = default;

    explicit DenseTensor(std::vector<Index> dims) : dims_(std::move(dims)) {
        validate_dims();
        data_ = Vector::Zero(element_count(dims_));
    }

    DenseTensor(std::vector<Index> dims, Vector data) : dims_(std::move(dims)), data_(std::move(data)) {
        validate_dims();
        if (data_.size() != element_count(dims_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match product of dims " +
                                 std::to_string(element_count(dims_)));
        }
    }

    const std::vector<Index>& dims() const noexcept { return dims_; }
    Index dim(Index mode) const { return dims_.at(static_cast<std::size_t>(mode)); }
    Index order() const noexcept { return static_cast<Index>(dims_.size()); }
    Index size() const noexcept { return data_.size(); }

    const Vector& data() const noexcept { return data_; }
    Vector& data() noexcept { return data_; }

    /// 1-based element access.
    double& operator()(std::span<const Index> index) { return data_[offset1(index)]; }
    double operator()(std::span<const Index> index) const { return data_[offset1(index)]; }
    double& at(std::initializer_list<Index> index) { return (*this)(std::span(index.begin(), index.size())); }
    double at(std::initializer_list<Index> index) const {
        return (*this)(std::span(index.begin(), index.size()));
    }

    /// Storage offset of a 0-based multi-index.
    Index offset0(std::span<const Index> index) const {
        Index off = 0;
        for (std::size_t k = 0; k < dims_.size(); ++k) off = off * dims_[k] + index[k];
        return off;
    }

    Index offset1(std::span<const Index> index) const {
        if (index.size() != dims_.size()) {
            throw DimensionError("index of length " + std::to_string(index.size()) + " for order-" +
                                 std::to_string(dims_.size()) + " tensor");
        }
        Index off = 0;
        for (std::size_t k = 0; k < dims_.size(); ++k) {
            if (index[k] < 1 || index[k] > dims_[k]) {
                throw RangeError("tensor index " + std::to_string(index[k]) + " out of range [1," +
                                 std::to_string(dims_[k]) + "] in mode " + std::to_string(k));
            }
            off = off * dims_[k] + (index[k] - 1);
        }
        return off;
    }

    double frobenius_norm() const { return data_.norm(); }

    static Index element_count(const std::vector<Index>& dims) {
        return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
    }

    friend bool operator==(const DenseTensor& a, const DenseTensor& b) {
        return a.dims_ == b.dims_ && a.data_ == b.data_;
    }

private:
    void validate_dims() const {
        if (dims_.empty()) throw DimensionError("tensor order must be at least 1");
        for (Index d : dims_) {
            if (d < 1) throw DimensionError("tensor dims must be positive");
        }
    }

    std::vector<Index> dims_;
    Vector data_;
};

namespace detail {

// Advance a 0-based odometer with the last mode fastest. Returns false on wrap.
inline bool increment(std::vector<Index>& index, const std::vector<Index>& dims) {
    for (std::size_t k = dims.size(); k-- > 0;) {
        if (++index[k] < dims[k]) return true;
        index[k] = 0;
    }
    return false;
}

inline void check_mode(const DenseTensor& tensor, Index mode) {
    if (mode < 0 || mode >= tensor.order()) {
        throw RangeError("mode " + std::to_string(mode) + " out of range for order-" +
                         std::to_string(tensor.order()) + " tensor");
    }
}

// Column weights J_l of the unfolding: lower-numbered non-t modes vary fastest.
inline std::vector<Index> unfolding_weights(const std::vector<Index>& dims, Index mode) {
    std::vector<Index> weights(dims.size(), 0);
    Index running = 1;
    for (std::size_t l = 0; l < dims.size(); ++l) {
        if (static_cast<Index>(l) == mode) continue;
        weights[l] = running;
        running *= dims[l];
    }
    return weights;
}

}  // namespace detail

/**
 * Mode-t unfolding. Entry (i_0,...,i_q) lands at row i_t and column
 * 1 + sum_{l != t} (i_l - 1) J_l with J_l = prod_{m < l, m != t} d_m.
 */
inline Matrix matricize(const DenseTensor& tensor, Index mode) {
    detail::check_mode(tensor, mode);
    const auto& dims = tensor.dims();
    const Index rows = dims[static_cast<std::size_t>(mode)];
    const Matrix::Index cols = tensor.size() / rows;
    const auto weights = detail::unfolding_weights(dims, mode);

    Matrix out(rows, cols);
    std::vector<Index> index(dims.size(), 0);
    Index linear = 0;
    do {
        Index col = 0;
        for (std::size_t l = 0; l < dims.size(); ++l) col += index[l] * weights[l];
        out(index[static_cast<std::size_t>(mode)], col) = tensor.data()[linear++];
    } while (detail::increment(index, dims));
    return out;
}

/// Inverse of matricize for the given target dims.
inline DenseTensor dematricize(const Matrix& unfolded, Index mode, const std::vector<Index>& dims) {
    DenseTensor out(dims);
    detail::check_mode(out, mode);
    const Index rows = dims[static_cast<std::size_t>(mode)];
    if (unfolded.rows() != rows || unfolded.cols() != out.size() / rows) {
        throw DimensionError("unfolding of shape " + std::to_string(unfolded.rows()) + "x" +
                             std::to_string(unfolded.cols()) + " does not match mode " +
                             std::to_string(mode) + " of the target dims");
    }
    const auto weights = detail::unfolding_weights(dims, mode);
    std::vector<Index> index(dims.size(), 0);
    Index linear = 0;
    do {
        Index col = 0;
        for (std::size_t l = 0; l < dims.size(); ++l) col += index[l] * weights[l];
        out.data()[linear++] = unfolded(index[static_cast<std::size_t>(mode)], col);
    } while (detail::increment(index, dims));
    return out;
}

/**
 * Mode-t product with an h_t x m_t matrix: sums the t-th index against the
 * rows of `factor`, so that M_t[T x_t E] = E^T M_t[T].
 */
inline DenseTensor mode_product(const DenseTensor& tensor, const Matrix& factor, Index mode) {
    detail::check_mode(tensor, mode);
    if (factor.rows() != tensor.dim(mode)) {
        throw DimensionError("mode product: factor has " + std::to_string(factor.rows()) +
                             " rows but mode " + std::to_string(mode) + " has dimension " +
                             std::to_string(tensor.dim(mode)));
    }
    auto dims = tensor.dims();
    dims[static_cast<std::size_t>(mode)] = factor.cols();
    const Matrix product = factor.transpose() * matricize(tensor, mode);
    return dematricize(product, mode, dims);
}

/// core x_0 E_0 x_1 E_1 ... x_q E_q, applied in mode order.
inline DenseTensor tucker_assemble(const DenseTensor& core, const std::vector<Matrix>& factors) {
    if (static_cast<Index>(factors.size()) != core.order()) {
        throw DimensionError("tucker_assemble needs one factor per mode");
    }
    DenseTensor out = core;
    for (std::size_t t = 0; t < factors.size(); ++t) {
        out = mode_product(out, factors[t], static_cast<Index>(t));
    }
    return out;
}

/// Sub-tensor on the given 1-based levels of every mode, in the listed order.
inline DenseTensor subtensor(const DenseTensor& tensor, const std::vector<std::vector<Index>>& levels) {
    if (static_cast<Index>(levels.size()) != tensor.order()) {
        throw DimensionError("subtensor needs one level list per mode");
    }
    std::vector<Index> dims;
    for (const auto& l : levels) dims.push_back(static_cast<Index>(l.size()));
    DenseTensor out(dims);
    std::vector<Index> pos(dims.size(), 0);
    std::vector<Index> src(dims.size());
    Index linear = 0;
    do {
        for (std::size_t k = 0; k < dims.size(); ++k) src[k] = levels[k][static_cast<std::size_t>(pos[k])];
        out.data()[linear++] = tensor(src);
    } while (detail::increment(pos, dims));
    return out;
}

/// Singular-value count of a matrix strictly above tol times the largest one.
inline Index numerical_rank(const Matrix& m, double tol) {
    if (m.size() == 0) return 0;
    const Vector sv = Eigen::BDCSVD<Matrix>(m).singularValues();
    if (sv.size() == 0 || sv[0] <= 0.0) return 0;
    return static_cast<Index>((sv.array() > tol * sv[0]).count());
}

/// Per-mode rank of the unfoldings with relative singular-value tolerance.
inline std::vector<Index> tucker_ranks(const DenseTensor& tensor, double tol) {
    if (tol < 0.0) throw std::invalid_argument("tucker_ranks: tol must be nonnegative");
    std::vector<Index> ranks;
    ranks.reserve(static_cast<std::size_t>(tensor.order()));
    for (Index t = 0; t < tensor.order(); ++t) ranks.push_back(numerical_rank(matricize(tensor, t), tol));
    return ranks;
}

// Text format: "dims: d0 d1 ... dq" followed by the values in storage order.

inline void write_tensor(std::ostream& os, const DenseTensor& tensor) {
    os << "dims:";
    for (Index d : tensor.dims()) os << ' ' << d;
    os << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
    const Index last = tensor.dims().back();
    for (Index i = 0; i < tensor.size(); ++i) {
        os << tensor.data()[i] << (((i + 1) % last == 0) ? '\n' : ' ');
    }
}

inline DenseTensor read_tensor(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw ConfigError("tensor file is empty");
    std::istringstream hs(header);
    std::string tag;
    hs >> tag;
    if (tag != "dims:") throw ConfigError("tensor file must start with 'dims:'");
    std::vector<Index> dims;
    Index d = 0;
    while (hs >> d) dims.push_back(d);
    if (!hs.eof()) throw ConfigError("malformed dims line in tensor file");
    if (dims.empty()) throw ConfigError("tensor file declares no dims");
    for (Index v : dims) {
        if (v < 1) throw ConfigError("tensor dims must be positive");
    }

    std::vector<double> values;
    std::string token;
    while (is >> token) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(token, &used);
        } catch (const std::exception&) {
            throw ConfigError("non-numeric value '" + token + "' in tensor file");
        }
        if (used != token.size()) throw ConfigError("non-numeric value '" + token + "' in tensor file");
        values.push_back(v);
    }
    const Index expected = DenseTensor::element_count(dims);
    if (static_cast<Index>(values.size()) != expected) {
        throw ConfigError("tensor file holds " + std::to_string(values.size()) + " values, dims require " +
                          std::to_string(expected));
    }
    return DenseTensor(std::move(dims), Eigen::Map<const Vector>(values.data(), expected));
}

}  // namespace tensordg
