#pragma once

#include <hrsa/error.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace hrsa {

/// Subtracts each column's mean over rows.
template <class Derived>
Eigen::MatrixXd center_columns(const Eigen::MatrixBase<Derived>& m) {
    Eigen::MatrixXd out = m;
    if (out.rows() == 0) return out;
    out.rowwise() -= out.colwise().mean();
    return out;
}

/// Per-row cosine top-k neighbor index sets (self excluded, each set sorted ascending).
struct NeighborSets {
    int k = 0;
    std::vector<std::vector<Eigen::Index>> sets;

    bool operator==(const NeighborSets&) const = default;
};

namespace detail {

// Fixed four-lane accumulation order: identical inputs give bit-identical
// results wherever they sit in memory, which the index tie-break relies on.
inline double ordered_dot(const double* a, const double* b, Eigen::Index n) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    Eigen::Index d = 0;
    for (; d + 4 <= n; d += 4) {
        acc[0] += a[d] * b[d];
        acc[1] += a[d + 1] * b[d + 1];
        acc[2] += a[d + 2] * b[d + 2];
        acc[3] += a[d + 3] * b[d + 3];
    }
    for (; d < n; ++d) acc[d & 3] += a[d] * b[d];
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

} // namespace detail

/// Exact O(N^2 D) cosine neighbor search. Ties go to the smaller index.
template <class Derived>
NeighborSets topk_cosine_neighbors(const Eigen::MatrixBase<Derived>& m, int k) {
    const Eigen::Index n = m.rows();
    const Eigen::Index dim = m.cols();
    if (k < 1 || k > n - 1)
        throw ValidationError("k out of range: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n - 1) +
                              "] for N=" + std::to_string(n));

    // One token per column so each row of m is contiguous.
    const Eigen::MatrixXd rows = m.transpose();
    std::vector<double> norms(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double* r = rows.col(i).data();
        norms[static_cast<std::size_t>(i)] = std::sqrt(detail::ordered_dot(r, r, dim));
        if (!(norms[static_cast<std::size_t>(i)] > 1e-12))
            throw ValidationError("zero-norm row " + std::to_string(i) + ": cosine similarity undefined");
    }

    NeighborSets out;
    out.k = k;
    out.sets.resize(static_cast<std::size_t>(n));
    std::vector<double> sim(static_cast<std::size_t>(n));
    std::vector<Eigen::Index> order;
    order.reserve(static_cast<std::size_t>(n - 1));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double* ri = rows.col(i).data();
        const double ni = norms[static_cast<std::size_t>(i)];
        order.clear();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            sim[static_cast<std::size_t>(j)] =
                detail::ordered_dot(ri, rows.col(j).data(), dim) / (ni * norms[static_cast<std::size_t>(j)]);
            order.push_back(j);
        }
        const auto better = [&](Eigen::Index a, Eigen::Index b) {
            const double sa = sim[static_cast<std::size_t>(a)];
            const double sb = sim[static_cast<std::size_t>(b)];
            return sa > sb || (sa == sb && a < b);
        };
        std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), better);
        auto& set = out.sets[static_cast<std::size_t>(i)];
        set.assign(order.begin(), order.begin() + k);
        std::sort(set.begin(), set.end());
    }
    return out;
}

struct OrthogonalFactor {
    Eigen::MatrixXd factor;          // U V^T
    Eigen::VectorXd singular_values; // descending
};

/// Polar orthogonal factor U V^T of C = U S V^T, with the spectrum.
inline OrthogonalFactor orthogonal_factor_with_spectrum(const Eigen::MatrixXd& c) {
    if (c.rows() != c.cols()) throw ValidationError("orthogonal factor needs a square matrix");
    if (!c.allFinite()) throw ValidationError("orthogonal factor input contains non-finite entries");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.info() != Eigen::Success) throw ValidationError("SVD did not converge");
    return {svd.matrixU() * svd.matrixV().transpose(), svd.singularValues()};
}

inline Eigen::MatrixXd orthogonal_factor(const Eigen::MatrixXd& c) { return orthogonal_factor_with_spectrum(c).factor; }

} // namespace hrsa
