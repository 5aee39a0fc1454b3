// Regenerates the committed synthetic fixtures under tests/fixtures/.
//
//   rotated_pair/a : 3 layers, N=64, D=8, Gaussian activations
//   rotated_pair/b : the same layers multiplied by one dense random orthogonal Q
//
// Usage: hrsa_make_fixtures <fixtures-dir>

#include <hrsa/activation_store.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <iostream>
#include <numeric>
#include <random>
#include <vector>

namespace {

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    return m;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index d, std::mt19937_64& rng) {
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(d, d, rng));
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < d; ++j)
        if (r(j, j) < 0) q.col(j) *= -1.0;
    return q;
}

} // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: hrsa_make_fixtures <fixtures-dir>\n";
        return 1;
    }
    const std::filesystem::path root = argv[1];
    constexpr Eigen::Index n = 64, d = 8, layers = 3;

    std::vector<std::int64_t> tokens(n);
    std::iota(tokens.begin(), tokens.end(), 1000);
    const std::string fingerprint = hrsa::corpus_fingerprint(tokens);

    std::mt19937_64 rng(20240531);
    const Eigen::MatrixXd q = random_orthogonal(d, rng);
    std::vector<hrsa::ActivationMatrix> a, b;
    for (Eigen::Index l = 0; l < layers; ++l) {
        Eigen::MatrixXd x = gaussian(n, d, rng);
        b.emplace_back(x * q, static_cast<int>(l), "synthetic-rotated", hrsa::SourceDtype::f64, fingerprint);
        a.emplace_back(std::move(x), static_cast<int>(l), "synthetic-base", hrsa::SourceDtype::f64, fingerprint);
    }
    hrsa::write_activation_set(hrsa::ActivationSet(std::move(a), "synthetic-base", fingerprint), root / "rotated_pair" / "a");
    hrsa::write_activation_set(hrsa::ActivationSet(std::move(b), "synthetic-rotated", fingerprint), root / "rotated_pair" / "b");
    std::cout << "wrote " << (root / "rotated_pair").string() << "\n";
    return 0;
}
