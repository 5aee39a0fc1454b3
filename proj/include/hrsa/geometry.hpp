#pragma once

// Geometry-level metrics: invariant to rotation and isotropic scaling of either space.

#include <hrsa/error.hpp>
#include <hrsa/numerics.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iterator>
#include <string>
#include <vector>

namespace hrsa {

enum class ComputeForm { gram, feature };

inline std::string to_string(ComputeForm f) { return f == ComputeForm::gram ? "gram" : "feature"; }

inline constexpr double kConstantRepresentationHsic = 1e-300;

namespace detail {

inline void require_same_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const char* what) {
    if (x.rows() != y.rows())
        throw ValidationError(std::string(what) + ": token count mismatch N=" + std::to_string(x.rows()) +
                              " vs N=" + std::to_string(y.rows()));
    if (x.rows() < 2) throw ValidationError(std::string(what) + ": need N >= 2");
}

inline double hsic_normalizer(Eigen::Index n) {
    const double nm1 = static_cast<double>(n - 1);
    return nm1 * nm1;
}

} // namespace detail

/// tr(K_X H K_Y H) / (N-1)^2 with raw linear Gram matrices and H = I - 11^T/N. O(N^2) memory.
inline double hsic_linear_gram(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    detail::require_same_rows(x, y, "HSIC");
    // K H subtracts each row's mean from that row.
    Eigen::MatrixXd kxh = x * x.transpose();
    kxh.colwise() -= kxh.rowwise().mean();
    Eigen::MatrixXd kyh = y * y.transpose();
    kyh.colwise() -= kyh.rowwise().mean();
    // tr(A B) = sum_ij A_ij B_ji
    return kxh.cwiseProduct(kyh.transpose()).sum() / detail::hsic_normalizer(x.rows());
}

/// ||X_c^T Y_c||_F^2 / (N-1)^2. Same value as the Gram form, O(D1 D2) memory.
inline double hsic_linear_feature(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    detail::require_same_rows(x, y, "HSIC");
    const Eigen::MatrixXd cross = center_columns(x).transpose() * center_columns(y);
    return cross.squaredNorm() / detail::hsic_normalizer(x.rows());
}

inline ComputeForm preferred_form(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    return (x.rows() >= x.cols() && y.rows() >= y.cols()) ? ComputeForm::feature : ComputeForm::gram;
}

inline double hsic_linear(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    return preferred_form(x, y) == ComputeForm::feature ? hsic_linear_feature(x, y) : hsic_linear_gram(x, y);
}

struct CkaResult {
    double value = 0.0;
    double hsic_xy = 0.0;
    double hsic_xx = 0.0;
    double hsic_yy = 0.0;
    ComputeForm compute_form = ComputeForm::feature;
};

inline CkaResult linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, ComputeForm form) {
    detail::require_same_rows(x, y, "linear CKA");
    CkaResult r;
    r.compute_form = form;
    if (form == ComputeForm::feature) {
        const Eigen::MatrixXd xc = center_columns(x);
        const Eigen::MatrixXd yc = center_columns(y);
        const double norm = detail::hsic_normalizer(x.rows());
        r.hsic_xy = (xc.transpose() * yc).squaredNorm() / norm;
        r.hsic_xx = (xc.transpose() * xc).squaredNorm() / norm;
        r.hsic_yy = (yc.transpose() * yc).squaredNorm() / norm;
    } else {
        r.hsic_xy = hsic_linear_gram(x, y);
        r.hsic_xx = hsic_linear_gram(x, x);
        r.hsic_yy = hsic_linear_gram(y, y);
    }
    if (!(r.hsic_xx > kConstantRepresentationHsic) || !(r.hsic_yy > kConstantRepresentationHsic))
        throw ValidationError("linear CKA: constant representation (zero self-HSIC)");
    r.value = r.hsic_xy / std::sqrt(r.hsic_xx * r.hsic_yy);
    return r;
}

/// Picks the feature form when N >= D on both sides, otherwise the Gram form.
inline CkaResult linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    return linear_cka(x, y, preferred_form(x, y));
}

struct KnnOverlapResult {
    int k = 0;
    double mean_overlap = 0.0;
    std::vector<double> per_point; // Jaccard index per row
};

/// Mean Jaccard index of two neighbor-set families over the same rows.
inline KnnOverlapResult knn_overlap(const NeighborSets& nx, const NeighborSets& ny) {
    if (nx.k != ny.k || nx.sets.size() != ny.sets.size())
        throw ValidationError("k-NN overlap: neighbor sets disagree on k or N");
    KnnOverlapResult r;
    r.k = nx.k;
    r.per_point.resize(nx.sets.size());
    double sum = 0.0;
    std::vector<Eigen::Index> common;
    for (std::size_t i = 0; i < nx.sets.size(); ++i) {
        common.clear();
        std::set_intersection(nx.sets[i].begin(), nx.sets[i].end(), ny.sets[i].begin(), ny.sets[i].end(),
                              std::back_inserter(common));
        const auto inter = static_cast<double>(common.size());
        r.per_point[i] = inter / (2.0 * r.k - inter);
        sum += r.per_point[i];
    }
    r.mean_overlap = r.per_point.empty() ? 0.0 : sum / static_cast<double>(r.per_point.size());
    return r;
}

inline KnnOverlapResult knn_overlap(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int k) {
    detail::require_same_rows(x, y, "k-NN overlap");
    return knn_overlap(topk_cosine_neighbors(x, k), topk_cosine_neighbors(y, k));
}

} // namespace hrsa
