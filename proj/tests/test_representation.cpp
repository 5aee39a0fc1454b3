#include <hrsa/representation.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace hrsa;
using namespace hrsa::testing;

TEST(Dimwise, IdentityAndNegation) {
    std::mt19937_64 rng(20);
    const Eigen::MatrixXd x = gaussian(30, 5, rng);
    const auto same = dimwise_correlation(x, x);
    EXPECT_NEAR(same.mean, 1.0, 1e-12);
    for (const auto& v : same.per_dim) EXPECT_NEAR(*v, 1.0, 1e-12);
    EXPECT_NEAR(dimwise_correlation(x, -x).mean, -1.0, 1e-12);
}

TEST(Dimwise, HalfCorrelatedColumn) {
    Eigen::MatrixXd x(3, 1), y(3, 1);
    x << 1, -1, 0;
    y << 1, 0, -1;
    EXPECT_NEAR(dimwise_correlation(x, y).mean, 0.5, 1e-15);
}

TEST(Dimwise, ConstantColumnIsExcluded) {
    std::mt19937_64 rng(21);
    Eigen::MatrixXd x = gaussian(20, 3, rng);
    Eigen::MatrixXd y = x;
    x.col(1).setConstant(4.0);
    const auto r = dimwise_correlation(x, y);
    EXPECT_EQ(r.num_undefined, 1);
    EXPECT_FALSE(r.per_dim[1].has_value());
    EXPECT_NEAR(r.mean, 1.0, 1e-12);

    Eigen::MatrixXd c = Eigen::MatrixXd::Ones(5, 2);
    EXPECT_THROW(dimwise_correlation(c, c), ValidationError);
    EXPECT_THROW(dimwise_correlation(x, gaussian(20, 4, rng)), ValidationError);
}

TEST(Dimwise, SymmetricAndNotRotationInvariant) {
    std::mt19937_64 rng(22);
    for (int t = 0; t < 20; ++t) {
        const Eigen::MatrixXd x = gaussian(40, 6, rng);
        const Eigen::MatrixXd y = x + 0.5 * gaussian(40, 6, rng);
        EXPECT_NEAR(dimwise_correlation(x, y).mean, dimwise_correlation(y, x).mean, 1e-14);
    }
    const Eigen::MatrixXd x = gaussian(200, 4, rng);
    const Eigen::MatrixXd q = random_orthogonal(4, rng);
    EXPECT_GT(std::abs(dimwise_correlation(x, x).mean - dimwise_correlation(x, x * q).mean), 1e-3);
}

TEST(Procrustes, IdentityAndRotation) {
    std::mt19937_64 rng(23);
    const Eigen::MatrixXd x = gaussian(80, 8, rng);
    const auto id = procrustes_align(x, x);
    EXPECT_LT((id.o_star - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE(id.residual, 1e-8);

    for (int t = 0; t < 20; ++t) {
        const Eigen::MatrixXd q = random_orthogonal(8, rng);
        const auto r = procrustes_align(x, x * q);
        EXPECT_LT((r.o_star - q).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LE(r.residual, 1e-6);
        EXPECT_FALSE(r.degenerate);
    }
}

TEST(Procrustes, OneDimensionalSignFlip) {
    Eigen::MatrixXd x(4, 1);
    x << 1, 2, -3, 0.5;
    const auto r = procrustes_align(x, -x);
    EXPECT_NEAR(r.o_star(0, 0), -1.0, 1e-15);
    EXPECT_NEAR(r.residual, 0.0, 1e-12);
    EXPECT_EQ(r.h_inv, 1.0);
}

TEST(Procrustes, ConjugationLawAndResidualInvariance) {
    std::mt19937_64 rng(24);
    for (int t = 0; t < 20; ++t) {
        const Eigen::MatrixXd x = gaussian(60, 6, rng);
        const Eigen::MatrixXd y = gaussian(60, 6, rng);
        const Eigen::MatrixXd r1 = random_orthogonal(6, rng);
        const Eigen::MatrixXd r2 = random_orthogonal(6, rng);
        const auto base = procrustes_align(x, y);
        const auto moved = procrustes_align(x * r1, y * r2);
        EXPECT_LT((moved.o_star - r1.transpose() * base.o_star * r2).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(moved.residual, base.residual, 1e-9 * std::max(1.0, base.residual));
    }
}

TEST(Procrustes, FlagsRankDeficientCrossCovariance) {
    std::mt19937_64 rng(25);
    Eigen::MatrixXd x = gaussian(30, 4, rng);
    x.col(3).setZero();
    EXPECT_TRUE(procrustes_align(x, gaussian(30, 4, rng)).degenerate);
}

TEST(Procrustes, CenteringRemovesOffsets) {
    std::mt19937_64 rng(26);
    const Eigen::MatrixXd x = gaussian(50, 5, rng);
    const Eigen::MatrixXd q = random_orthogonal(5, rng);
    Eigen::MatrixXd y = x * q;
    y.rowwise() += Eigen::RowVectorXd::Constant(5, 7.0);
    EXPECT_GT(procrustes_align(x, y).residual, 1.0);
    const auto c = procrustes_align(x, y, {true});
    EXPECT_LT(c.residual, 1e-9);
    EXPECT_LT((c.o_star - q).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(InverseRowEntropy, KnownValues) {
    EXPECT_EQ(inverse_row_entropy(Eigen::MatrixXd::Identity(7, 7)), 1.0);
    EXPECT_NEAR(inverse_row_entropy(rotation2(std::numbers::pi / 4)), 0.0, 1e-12);

    Eigen::MatrixXd h(4, 4);
    h << 1, 1, 1, 1, 1, -1, 1, -1, 1, 1, -1, -1, 1, -1, -1, 1;
    EXPECT_NEAR(inverse_row_entropy(h / 2.0), 0.0, 1e-12);

    std::mt19937_64 rng(27);
    for (int t = 0; t < 10; ++t) EXPECT_EQ(inverse_row_entropy(random_permutation(9, rng)), 1.0);
    for (int t = 0; t < 20; ++t) {
        const double v = inverse_row_entropy(random_orthogonal(2 + t, rng));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(InverseRowEntropy, Preconditions) {
    EXPECT_THROW(inverse_row_entropy(Eigen::MatrixXd::Identity(1, 1)), ValidationError);
    EXPECT_THROW(inverse_row_entropy(2.0 * Eigen::MatrixXd::Identity(3, 3)), ValidationError);
    EXPECT_THROW(inverse_row_entropy(Eigen::MatrixXd::Identity(2, 3)), ValidationError);
}
