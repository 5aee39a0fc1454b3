#include <hrsa/geometry.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace hrsa;
using namespace hrsa::testing;

namespace {

// Textbook evaluation with an explicit centering matrix.
double hsic_reference(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const Eigen::Index n = x.rows();
    const Eigen::MatrixXd h =
        Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    const Eigen::MatrixXd kx = x * x.transpose();
    const Eigen::MatrixXd ky = y * y.transpose();
    return (kx * h * ky * h).trace() / static_cast<double>((n - 1) * (n - 1));
}

Eigen::MatrixXd column(std::initializer_list<double> v) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

} // namespace

TEST(Hsic, KnownValues) {
    const Eigen::MatrixXd x = column({0, 1, 2});
    EXPECT_NEAR(hsic_linear_gram(x, x), 1.0, 1e-15);
    EXPECT_NEAR(hsic_linear_feature(x, x), 1.0, 1e-15);
    const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(5, 3, 2.0);
    std::mt19937_64 rng(30);
    const Eigen::MatrixXd g = gaussian(5, 4, rng);
    EXPECT_NEAR(hsic_linear_gram(c, g), 0.0, 1e-12);
    EXPECT_NEAR(hsic_linear_feature(c, g), 0.0, 1e-12);
}

TEST(Hsic, FormsAgreeWithReference) {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> nd(2, 256), dd(1, 256);
    for (int t = 0; t < 30; ++t) {
        const int n = nd(rng);
        const Eigen::MatrixXd x = gaussian(n, dd(rng), rng);
        // offset checks that both forms center
        const Eigen::MatrixXd y = (gaussian(n, dd(rng), rng).array() + 2.0).matrix();
        const double ref = hsic_reference(x, y);
        const double scale = std::max(1.0, std::abs(ref));
        EXPECT_NEAR(hsic_linear_gram(x, y), ref, 1e-9 * scale);
        EXPECT_NEAR(hsic_linear_feature(x, y), ref, 1e-9 * scale);
        EXPECT_NEAR(hsic_linear(x, y), hsic_linear(y, x), 1e-9 * scale);
    }
}

TEST(Cka, KnownValues) {
    const Eigen::MatrixXd x = column({0, 1, 2});
    const Eigen::MatrixXd y = column({0, 1, 4});
    EXPECT_NEAR(linear_cka(x, y, ComputeForm::feature).value, 12.0 / 13.0, 1e-12);
    EXPECT_NEAR(linear_cka(x, y, ComputeForm::gram).value, 12.0 / 13.0, 1e-12);

    std::mt19937_64 rng(32);
    const Eigen::MatrixXd g = gaussian(50, 10, rng);
    EXPECT_NEAR(linear_cka(g, g).value, 1.0, 1e-12);
    EXPECT_NEAR(linear_cka(g, 3.0 * g * random_orthogonal(10, rng)).value, 1.0, 1e-9);
}

TEST(Cka, InvariancesAndSymmetry) {
    std::mt19937_64 rng(33);
    for (int t = 0; t < 20; ++t) {
        const Eigen::MatrixXd x = gaussian(100, 12, rng);
        const Eigen::MatrixXd y = x * gaussian(12, 9, rng) + gaussian(100, 9, rng);
        const auto base = linear_cka(x, y);
        EXPECT_NEAR(base.value * base.value * base.hsic_xx * base.hsic_yy, base.hsic_xy * base.hsic_xy,
                    1e-9 * base.hsic_xy * base.hsic_xy);
        EXPECT_NEAR(linear_cka(y, x).value, base.value, 1e-12);
        const double moved = linear_cka(0.3 * x * random_orthogonal(12, rng), 4.0 * y * random_orthogonal(9, rng)).value;
        EXPECT_NEAR(moved, base.value, 1e-9);
        EXPECT_GE(base.value, 0.0);
        EXPECT_LE(base.value, 1.0 + 1e-12);
    }
}

TEST(Cka, FormsAgreeWideAndTall) {
    std::mt19937_64 rng(34);
    for (auto [n, d] : {std::pair{20, 80}, std::pair{200, 10}, std::pair{64, 64}}) {
        const Eigen::MatrixXd x = gaussian(n, d, rng);
        const Eigen::MatrixXd y = gaussian(n, d, rng);
        EXPECT_NEAR(linear_cka(x, y, ComputeForm::gram).value, linear_cka(x, y, ComputeForm::feature).value, 1e-9);
    }
    EXPECT_EQ(preferred_form(gaussian(20, 80, rng), gaussian(20, 5, rng)), ComputeForm::gram);
    EXPECT_EQ(preferred_form(gaussian(80, 20, rng), gaussian(80, 5, rng)), ComputeForm::feature);
}

TEST(Cka, NotInvariantToAnisotropicScaling) {
    std::mt19937_64 rng(35);
    const Eigen::MatrixXd x = gaussian(200, 4, rng);
    Eigen::VectorXd s(4);
    s << 10, 1, 0.1, 0.01;
    EXPECT_LT(linear_cka(x, x * s.asDiagonal()).value, 1.0 - 1e-3);
}

TEST(Cka, Errors) {
    std::mt19937_64 rng(36);
    EXPECT_THROW(linear_cka(Eigen::MatrixXd::Constant(6, 3, 1.0), gaussian(6, 3, rng)), ValidationError);
    EXPECT_THROW(linear_cka(gaussian(6, 3, rng), gaussian(7, 3, rng)), ValidationError);
}

TEST(Knn, IdentityAndSimilarity) {
    std::mt19937_64 rng(37);
    const Eigen::MatrixXd x = gaussian(60, 8, rng);
    EXPECT_EQ(knn_overlap(x, x, 5).mean_overlap, 1.0);
    EXPECT_EQ(knn_overlap(x, 0.5 * x * random_orthogonal(8, rng), 5).mean_overlap, 1.0);
    EXPECT_EQ(knn_overlap(x, gaussian(60, 8, rng), 59).mean_overlap, 1.0);
}

TEST(Knn, SwappedPointsFixture) {
    const Eigen::MatrixXd x = four_points();
    Eigen::MatrixXd y = x;
    y.row(2) = x.row(3);
    y.row(3) = x.row(2);
    const auto r = knn_overlap(x, y, 1);
    EXPECT_EQ(r.per_point, (std::vector<double>{1.0, 1.0, 0.0, 0.0}));
    EXPECT_EQ(r.mean_overlap, 0.5);
}

TEST(Knn, PerPointValuesAreJaccardFractions) {
    std::mt19937_64 rng(38);
    for (int t = 0; t < 10; ++t) {
        const Eigen::MatrixXd x = gaussian(80, 6, rng);
        const Eigen::MatrixXd y = x + 0.7 * gaussian(80, 6, rng);
        const int k = 7;
        const auto r = knn_overlap(x, y, k);
        for (double v : r.per_point) {
            bool found = false;
            for (int j = 0; j <= k; ++j) found |= v == static_cast<double>(j) / (2.0 * k - j);
            EXPECT_TRUE(found) << v;
        }
        EXPECT_EQ(knn_overlap(y, x, k).mean_overlap, r.mean_overlap);
    }
}

TEST(Knn, NotInvariantToAnisotropicScaling) {
    std::mt19937_64 rng(39);
    const Eigen::MatrixXd x = gaussian(150, 4, rng);
    Eigen::VectorXd s(4);
    s << 10, 1, 0.1, 0.01;
    EXPECT_LT(knn_overlap(x, x * s.asDiagonal(), 5).mean_overlap, 1.0);
}
