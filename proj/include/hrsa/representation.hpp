#pragma once

// Representation-level metrics: these depend on the coordinate basis.

#include <hrsa/error.hpp>
#include <hrsa/numerics.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace hrsa {

inline constexpr double kUndefinedColumnNorm = 1e-12;
inline constexpr double kDegenerateSpectrumRatio = 1e-10;
inline constexpr double kUnitRowTolerance = 1e-6;

struct DimwiseCorrelation {
    std::vector<std::optional<double>> per_dim; // nullopt where a column has zero variance
    double mean = 0.0;                          // over defined entries only
    int num_undefined = 0;
};

namespace detail {

inline void require_same_shape(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const char* what) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw ValidationError(std::string(what) + ": shape mismatch " + std::to_string(x.rows()) + "x" +
                              std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) + "x" +
                              std::to_string(y.cols()));
}

} // namespace detail

/// Per-feature Pearson correlation between matching columns, after centering over tokens.
inline DimwiseCorrelation dimwise_correlation(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    detail::require_same_shape(x, y, "dimwise correlation");
    const Eigen::MatrixXd xc = center_columns(x);
    const Eigen::MatrixXd yc = center_columns(y);

    DimwiseCorrelation out;
    out.per_dim.resize(static_cast<std::size_t>(x.cols()));
    double sum = 0.0;
    int defined = 0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double nx = xc.col(j).norm();
        const double ny = yc.col(j).norm();
        if (nx < kUndefinedColumnNorm || ny < kUndefinedColumnNorm) {
            ++out.num_undefined;
            continue;
        }
        const double rho = std::clamp(xc.col(j).dot(yc.col(j)) / (nx * ny), -1.0, 1.0);
        out.per_dim[static_cast<std::size_t>(j)] = rho;
        sum += rho;
        ++defined;
    }
    if (defined == 0) throw ValidationError("dimwise correlation: every column has zero variance");
    out.mean = sum / defined;
    return out;
}

/// 1 - (mean row entropy of the squared entries) / ln D. 1 for permutations, 0 for fully mixed maps.
inline double inverse_row_entropy(const Eigen::MatrixXd& o) {
    const Eigen::Index d = o.rows();
    if (o.cols() != d) throw ValidationError("inverse row entropy needs a square matrix");
    if (d < 2) throw ValidationError("inverse row entropy undefined for D < 2");
    double total = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        const double norm = o.row(i).norm();
        if (std::abs(norm - 1.0) > kUnitRowTolerance)
            throw ValidationError("row " + std::to_string(i) + " has norm " + std::to_string(norm) +
                                  ", expected unit rows");
        for (Eigen::Index j = 0; j < d; ++j) {
            const double p = o(i, j) * o(i, j);
            if (p > 0.0) total -= p * std::log(p);
        }
    }
    const double h = total / (static_cast<double>(d) * std::log(static_cast<double>(d)));
    return std::clamp(1.0 - h, 0.0, 1.0);
}

struct ProcrustesOptions {
    bool center = false;
};

struct ProcrustesSolution {
    Eigen::MatrixXd o_star;
    double residual = 0.0;  // ||X O* - Y||_F
    double h_inv = 0.0;
    bool degenerate = false; // X^T Y rank deficient: O* not unique
    Eigen::VectorXd singular_values;
};

/// Orthogonal O minimizing ||X O - Y||_F, via the polar factor of X^T Y.
inline ProcrustesSolution procrustes_align(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                           ProcrustesOptions options = {}) {
    detail::require_same_shape(x, y, "procrustes");
    const Eigen::MatrixXd xs = options.center ? center_columns(x) : x;
    const Eigen::MatrixXd ys = options.center ? center_columns(y) : y;
    auto [factor, spectrum] = orthogonal_factor_with_spectrum(xs.transpose() * ys);

    ProcrustesSolution out;
    out.o_star = std::move(factor);
    out.residual = (xs * out.o_star - ys).norm();
    out.singular_values = std::move(spectrum);
    const double smax = out.singular_values.size() ? out.singular_values.maxCoeff() : 0.0;
    const double smin = out.singular_values.size() ? out.singular_values.minCoeff() : 0.0;
    out.degenerate = smax <= 0.0 || smin < kDegenerateSpectrumRatio * smax;
    out.h_inv = out.o_star.rows() >= 2 ? inverse_row_entropy(out.o_star) : 1.0;
    return out;
}

} // namespace hrsa
