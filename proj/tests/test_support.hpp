#pragma once

#include <hrsa/activation_store.hpp>
#include <hrsa/numerics.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace hrsa::testing {

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
    return m;
}

/// Haar-distributed orthogonal matrix via QR with the sign of diag(R) folded in.
inline Eigen::MatrixXd random_orthogonal(Eigen::Index d, std::mt19937_64& rng) {
    const Eigen::MatrixXd g = gaussian(d, d, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < d; ++i)
        if (r(i, i) < 0) q.col(i) *= -1.0;
    return q;
}

/// Rotations Q_t = V diag(R((1-t) a_i)) V^T, so Q_0 is a dense rotation and Q_1 = I.
/// Angles lie in [pi/3, 2pi/3]; an odd D keeps one fixed axis.
class RotationPath {
public:
    RotationPath(Eigen::Index d, std::mt19937_64& rng) : basis_(random_orthogonal(d, rng)) {
        std::uniform_real_distribution<double> angle(std::acos(0.5), std::acos(-0.5));
        for (Eigen::Index i = 0; i + 1 < d; i += 2) angles_.push_back(angle(rng));
    }

    Eigen::MatrixXd at(double t) const {
        const Eigen::Index d = basis_.rows();
        Eigen::MatrixXd block = Eigen::MatrixXd::Identity(d, d);
        for (std::size_t p = 0; p < angles_.size(); ++p) {
            const double a = (1.0 - t) * angles_[p];
            const auto i = static_cast<Eigen::Index>(2 * p);
            block(i, i) = std::cos(a);
            block(i, i + 1) = -std::sin(a);
            block(i + 1, i) = std::sin(a);
            block(i + 1, i + 1) = std::cos(a);
        }
        return basis_ * block * basis_.transpose();
    }

private:
    Eigen::MatrixXd basis_;
    std::vector<double> angles_;
};

inline Eigen::MatrixXd random_permutation(Eigen::Index d, std::mt19937_64& rng) {
    std::vector<Eigen::Index> p(static_cast<std::size_t>(d));
    std::iota(p.begin(), p.end(), Eigen::Index{0});
    std::shuffle(p.begin(), p.end(), rng);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < d; ++i) m(i, p[static_cast<std::size_t>(i)]) = 1.0;
    return m;
}

inline Eigen::MatrixXd rotation2(double radians) {
    Eigen::MatrixXd r(2, 2);
    r << std::cos(radians), -std::sin(radians), std::sin(radians), std::cos(radians);
    return r;
}

/// The four 2-D points used by several fixed-value checks.
inline Eigen::MatrixXd four_points() {
    Eigen::MatrixXd p(4, 2);
    p << 1.0, 0.0, 0.9, 0.1, 0.0, 1.0, -1.0, 0.0;
    return p;
}

inline ActivationSet make_set(const std::vector<Eigen::MatrixXd>& layers, const std::string& model = "m",
                              const std::string& fingerprint = "fp") {
    std::vector<ActivationMatrix> ms;
    for (std::size_t l = 0; l < layers.size(); ++l)
        ms.emplace_back(layers[l], static_cast<int>(l), model, SourceDtype::f64, fingerprint);
    return ActivationSet(std::move(ms), model, fingerprint);
}

/// Plain reference: full sort of cosine similarities, index order breaking ties.
inline NeighborSets brute_force_neighbors(const Eigen::MatrixXd& x, int k) {
    NeighborSets out;
    out.k = k;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<std::pair<double, Eigen::Index>> cand;
        for (Eigen::Index j = 0; j < x.rows(); ++j) {
            if (j == i) continue;
            cand.push_back({x.row(i).dot(x.row(j)) / (x.row(i).norm() * x.row(j).norm()), j});
        }
        std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
            return a.first > b.first || (a.first == b.first && a.second < b.second);
        });
        std::vector<Eigen::Index> set;
        for (int t = 0; t < k; ++t) set.push_back(cand[static_cast<std::size_t>(t)].second);
        std::sort(set.begin(), set.end());
        out.sets.push_back(set);
    }
    return out;
}

/// Class 1 at (1, +-0.5), class 0 at (-1, +-0.5); three copies so each split holds all four points.
struct RotatedProbeFixture {
    Eigen::MatrixXd x{12, 2};
    LabelSet labels;

    RotatedProbeFixture() {
        const double pts[4][2] = {{1, 0.5}, {1, -0.5}, {-1, 0.5}, {-1, -0.5}};
        labels.num_classes = 2;
        labels.labels.resize(12);
        for (int copy = 0; copy < 3; ++copy)
            for (int p = 0; p < 4; ++p) {
                const int i = copy * 4 + p;
                x(i, 0) = pts[p][0];
                x(i, 1) = pts[p][1];
                labels.labels[i] = p < 2 ? 1.0 : 0.0;
                (copy == 0 ? labels.splits.train : copy == 1 ? labels.splits.dev : labels.splits.test)
                    .push_back(static_cast<std::size_t>(i));
            }
    }
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "hrsa") {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

} // namespace hrsa::testing
