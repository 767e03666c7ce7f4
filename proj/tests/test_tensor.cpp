#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tensordg/tensor.hpp"

using namespace tensordg;

namespace {

DenseTensor counting_tensor(std::vector<Index> dims) {
    DenseTensor t(std::move(dims));
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<double>(i + 1);
    return t;
}

}  // namespace

TEST(DenseTensor, StorageIsLastModeFastest) {
    const auto t = counting_tensor({2, 3, 2});
    EXPECT_EQ(t.at({1, 1, 1}), 1.0);
    EXPECT_EQ(t.at({1, 1, 2}), 2.0);
    EXPECT_EQ(t.at({1, 2, 1}), 3.0);
    EXPECT_EQ(t.at({2, 1, 1}), 7.0);
    EXPECT_EQ(t.at({2, 3, 2}), 12.0);
}

TEST(DenseTensor, RejectsBadShapesAndIndices) {
    EXPECT_THROW(DenseTensor({2, 0}), DimensionError);
    EXPECT_THROW(DenseTensor({2, 2}, Vector::Zero(3)), DimensionError);
    const auto t = counting_tensor({2, 2});
    EXPECT_THROW(t.at({3, 1}), RangeError);
    EXPECT_THROW(t.at({0, 1}), RangeError);
    EXPECT_THROW(t.at({1, 1, 1}), DimensionError);
}

TEST(Matricize, HandComputedColumnFormula) {
    // dims (2,3,2), element (2,3,1), mode 1: row 3, column 1 + (2-1)*1 + (1-1)*2 = 2.
    DenseTensor t({2, 3, 2});
    t.at({2, 3, 1}) = 42.0;
    const Matrix m = matricize(t, 1);
    ASSERT_EQ(m.rows(), 3);
    ASSERT_EQ(m.cols(), 4);
    EXPECT_EQ(m(2, 1), 42.0);
    EXPECT_EQ(m.cwiseAbs().sum(), 42.0);
}

TEST(Matricize, DegenerateTrailingModesGiveColumn) {
    const auto t = counting_tensor({4, 1, 1});
    const Matrix m = matricize(t, 0);
    ASSERT_EQ(m.cols(), 1);
    for (Index i = 0; i < 4; ++i) EXPECT_EQ(m(i, 0), static_cast<double>(i + 1));
}

TEST(Matricize, ModeZeroColumnsAreGroupVectors) {
    // Column 1 + (i1-1) + (i2-1) p1 of M_0 holds beta(i1, i2).
    std::mt19937_64 rng(7);
    const auto t = oracle::random_tensor({5, 3, 4}, rng);
    const Matrix m = matricize(t, 0);
    ASSERT_EQ(m.rows(), 5);
    ASSERT_EQ(m.cols(), 12);
    for (Index i1 = 1; i1 <= 3; ++i1)
        for (Index i2 = 1; i2 <= 4; ++i2)
            for (Index j = 1; j <= 5; ++j) EXPECT_EQ(m(j - 1, (i1 - 1) + (i2 - 1) * 3), t.at({j, i1, i2}));
}

TEST(Matricize, MatchesIndexFormulaOracle) {
    std::mt19937_64 rng(11);
    for (const auto& dims : std::vector<std::vector<Index>>{{2, 3, 2}, {3, 1, 4, 2}, {5}, {2, 2, 2, 2, 2}}) {
        const auto t = oracle::random_tensor(dims, rng);
        for (std::size_t k = 0; k < dims.size(); ++k) {
            EXPECT_EQ(matricize(t, static_cast<Index>(k)), oracle::matricize(t, k));
        }
    }
}

TEST(Matricize, RejectsModeOutOfRange) {
    const auto t = counting_tensor({2, 2});
    EXPECT_THROW(matricize(t, 2), RangeError);
    EXPECT_THROW(matricize(t, -1), RangeError);
}

TEST(Dematricize, RoundTrip) {
    std::mt19937_64 rng(3);
    const auto t = oracle::random_tensor({2, 3, 2}, rng);
    for (Index k = 0; k < 3; ++k) EXPECT_EQ(dematricize(matricize(t, k), k, t.dims()), t);
}

TEST(Dematricize, ScalarTensor) {
    Matrix m(1, 1);
    m(0, 0) = 2.5;
    const auto t = dematricize(m, 0, {1, 1});
    EXPECT_EQ(t.at({1, 1}), 2.5);
}

TEST(Dematricize, HandDecodedColumn) {
    // dims (2,2,2), row 2, column 3 (1-based), t = 0: column 3 decodes to (i1, i2) = (1, 2).
    Matrix m = Matrix::Zero(2, 4);
    m(1, 2) = 9.0;
    const auto t = dematricize(m, 0, {2, 2, 2});
    EXPECT_EQ(t.at({2, 1, 2}), 9.0);
    EXPECT_EQ(t.frobenius_norm(), 9.0);
}

TEST(Dematricize, RejectsShapeMismatch) {
    EXPECT_THROW(dematricize(Matrix::Zero(2, 3), 0, {2, 2, 2}), DimensionError);
}

TEST(ModeProduct, IdentityLeavesTensorUnchanged) {
    std::mt19937_64 rng(5);
    const auto t = oracle::random_tensor({3, 4, 2}, rng);
    for (Index k = 0; k < 3; ++k) EXPECT_EQ(mode_product(t, Matrix::Identity(t.dim(k), t.dim(k)), k), t);
}

TEST(ModeProduct, OnesVectorSumsColumns) {
    DenseTensor t({2, 2}, (Vector(4) << 1, 2, 3, 4).finished());
    const auto s = mode_product(t, Matrix::Ones(2, 1), 0);
    ASSERT_EQ(s.dims(), (std::vector<Index>{1, 2}));
    EXPECT_EQ(s.at({1, 1}), 4.0);
    EXPECT_EQ(s.at({1, 2}), 6.0);
}

TEST(ModeProduct, MatchesNaiveLoops) {
    std::mt19937_64 rng(9);
    const auto t = oracle::random_tensor({3, 4, 2}, rng);
    for (Index k = 0; k < 3; ++k) {
        const Matrix E = oracle::random_matrix(t.dim(k), 5, rng);
        EXPECT_LT(oracle::rel_diff(mode_product(t, E, k), oracle::mode_product(t, E, static_cast<std::size_t>(k))),
                  1e-12);
    }
}

TEST(ModeProduct, CommutesAcrossModes) {
    std::mt19937_64 rng(13);
    const auto t = oracle::random_tensor({3, 2, 4}, rng);
    const Matrix A = oracle::random_matrix(2, 3, rng);
    const Matrix B = oracle::random_matrix(4, 2, rng);
    const auto ab = oracle::mode_product(oracle::mode_product(t, A, 1), B, 2);
    const auto ba = oracle::mode_product(oracle::mode_product(t, B, 2), A, 1);
    EXPECT_LT(oracle::rel_diff(ab, ba), 1e-12);
    EXPECT_LT(oracle::rel_diff(mode_product(mode_product(t, A, 1), B, 2), ab), 1e-12);
    EXPECT_LT(oracle::rel_diff(mode_product(mode_product(t, B, 2), A, 1), ab), 1e-12);
}

TEST(ModeProduct, AssociativeWithinMode) {
    std::mt19937_64 rng(17);
    const auto t = oracle::random_tensor({3, 4}, rng);
    const Matrix A = oracle::random_matrix(4, 5, rng);
    const Matrix B = oracle::random_matrix(5, 2, rng);
    EXPECT_LT(oracle::rel_diff(mode_product(mode_product(t, A, 1), B, 1), mode_product(t, A * B, 1)), 1e-12);
}

TEST(ModeProduct, RejectsRowMismatch) {
    const auto t = counting_tensor({2, 3});
    EXPECT_THROW(mode_product(t, Matrix::Zero(2, 2), 1), DimensionError);
}

TEST(TuckerAssemble, IdentityFactors) {
    std::mt19937_64 rng(19);
    const auto core = oracle::random_tensor({2, 3, 2}, rng);
    EXPECT_EQ(tucker_assemble(core, {Matrix::Identity(2, 2), Matrix::Identity(3, 3), Matrix::Identity(2, 2)}), core);
}

TEST(TuckerAssemble, RankOneOuterProduct) {
    DenseTensor core({1, 1}, Vector::Ones(1));
    Matrix u(1, 3), v(1, 2);
    u << 1, 2, 3;
    v << -1, 4;
    const auto t = tucker_assemble(core, {u, v});
    for (Index i = 1; i <= 3; ++i)
        for (Index j = 1; j <= 2; ++j) EXPECT_EQ(t.at({i, j}), u(0, i - 1) * v(0, j - 1));
}

TEST(TuckerAssemble, UnfoldingIdentityAgainstNaiveLoops) {
    std::mt19937_64 rng(23);
    const auto core = oracle::random_tensor({2, 3, 2}, rng);
    std::vector<Matrix> f{oracle::random_matrix(2, 5, rng), oracle::random_matrix(3, 4, rng),
                          oracle::random_matrix(2, 3, rng)};
    const auto t = tucker_assemble(core, f);
    // Partial product over every mode but 1, then Gamma_1^T times its unfolding.
    const auto partial = oracle::mode_product(oracle::mode_product(core, f[0], 0), f[2], 2);
    EXPECT_LT(oracle::rel_diff(matricize(t, 1), f[1].transpose() * oracle::matricize(partial, 1)), 1e-12);
}

TEST(TuckerAssemble, RejectsFactorMismatch) {
    DenseTensor core({2, 2});
    EXPECT_THROW(tucker_assemble(core, {Matrix::Identity(2, 2)}), DimensionError);
    EXPECT_THROW(tucker_assemble(core, {Matrix::Identity(2, 2), Matrix::Identity(3, 3)}), DimensionError);
}

TEST(TuckerRanks, ZeroTensor) {
    EXPECT_EQ(tucker_ranks(DenseTensor({3, 2, 2}), 1e-10), (std::vector<Index>{0, 0, 0}));
}

TEST(TuckerRanks, OuterProductIsRankOne) {
    DenseTensor core({1, 1, 1}, Vector::Ones(1));
    std::mt19937_64 rng(29);
    const auto t = tucker_assemble(core, {oracle::random_matrix(1, 4, rng), oracle::random_matrix(1, 3, rng),
                                          oracle::random_matrix(1, 5, rng)});
    EXPECT_EQ(tucker_ranks(t, 1e-10), (std::vector<Index>{1, 1, 1}));
}

TEST(TuckerRanks, FullColumnRankFactorsPreserveCoreRanks) {
    std::mt19937_64 rng(31);
    const auto core = oracle::random_tensor({2, 3, 2}, rng);
    const auto t = tucker_assemble(core, {oracle::random_matrix(2, 6, rng), oracle::random_matrix(3, 5, rng),
                                          oracle::random_matrix(2, 4, rng)});
    EXPECT_EQ(tucker_ranks(t, 1e-10), (std::vector<Index>{2, 3, 2}));
    EXPECT_EQ(tucker_ranks(t, 1e-10), tucker_ranks(core, 1e-10));
    EXPECT_THROW(tucker_ranks(t, -1.0), std::invalid_argument);
}

TEST(Subtensor, SelectsLevels) {
    const auto t = counting_tensor({2, 3, 2});
    const auto s = subtensor(t, {{2}, {1, 3}, {1, 2}});
    ASSERT_EQ(s.dims(), (std::vector<Index>{1, 2, 2}));
    EXPECT_EQ(s.at({1, 2, 1}), t.at({2, 3, 1}));
    EXPECT_EQ(s.at({1, 1, 2}), t.at({2, 1, 2}));
}

TEST(TensorIo, WriteReadRoundTrip) {
    std::mt19937_64 rng(37);
    const auto t = oracle::random_tensor({3, 2, 4}, rng);
    std::stringstream ss;
    write_tensor(ss, t);
    EXPECT_EQ(ss.str().rfind("dims: 3 2 4\n", 0), 0u);
    EXPECT_EQ(read_tensor(ss), t);
}

TEST(TensorIo, RejectsMalformedFiles) {
    std::istringstream wrong_count("dims: 2 2\n1 2 3\n");
    EXPECT_THROW(read_tensor(wrong_count), ConfigError);
    std::istringstream no_header("2 2\n1 2 3 4\n");
    EXPECT_THROW(read_tensor(no_header), ConfigError);
    std::istringstream junk("dims: 2\n1 x\n");
    EXPECT_THROW(read_tensor(junk), ConfigError);
    std::istringstream empty("");
    EXPECT_THROW(read_tensor(empty), ConfigError);
}
