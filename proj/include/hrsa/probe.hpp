#pragma once

// Function-level similarity: a linear readout fit on one space, frozen, and applied to another.

#include <hrsa/activation_store.hpp>
#include <hrsa/error.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hrsa {

struct ProbeConfig {
    std::optional<TaskKind> task; // defaults to the label set's task kind
    double reg_lambda = 1e-4;
    int max_iters = 500;
    double gradient_tolerance = 1e-8;
};

struct TrainMeta {
    int iterations = 0;
    double final_objective = 0.0;
    double gradient_norm = 0.0;
    bool converged = false;
    double train_score = 0.0; // accuracy or R^2 on the train split
};

/// Affine readout: scores = Z W + 1 b^T.
struct ProbeModel {
    Eigen::MatrixXd weights; // D x C (D x 1 for regression)
    Eigen::VectorXd bias;    // C
    TaskKind task_kind = TaskKind::classification;
    double reg_lambda = 0.0;
    TrainMeta train_meta;

    Eigen::Index dim() const { return weights.rows(); }
};

namespace detail {

// Above this many parameters the dense Newton system is replaced by L-BFGS.
inline constexpr Eigen::Index kNewtonMaxParams = 2048;

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(idx[r]));
    return out;
}

inline void require_rows_match(const Eigen::MatrixXd& x, const LabelSet& labels) {
    if (static_cast<std::size_t>(x.rows()) != labels.size())
        throw ValidationError("length mismatch: matrix has " + std::to_string(x.rows()) + " rows but " +
                              std::to_string(labels.size()) + " labels were given");
}

/// Softmax cross-entropy (mean over rows) + lambda/2 ||W||^2 on a parameter block
/// theta = [W; b^T] of shape (D+1) x C. Fills the gradient when requested.
class SoftmaxObjective {
public:
    SoftmaxObjective(const Eigen::MatrixXd& x, const std::vector<int>& y, int classes, double lambda)
        : xa_(x.rows(), x.cols() + 1), onehot_(Eigen::MatrixXd::Zero(x.rows(), classes)), lambda_(lambda) {
        xa_.leftCols(x.cols()) = x;
        xa_.col(x.cols()).setOnes();
        for (Eigen::Index i = 0; i < x.rows(); ++i) onehot_(i, y[static_cast<std::size_t>(i)]) = 1.0;
    }

    Eigen::Index features() const { return xa_.cols() - 1; }
    Eigen::Index classes() const { return onehot_.cols(); }

    double value(const Eigen::MatrixXd& theta, Eigen::MatrixXd* grad, Eigen::MatrixXd* probs = nullptr) const {
        const Eigen::Index n = xa_.rows();
        Eigen::MatrixXd z = xa_ * theta;
        double loss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double zmax = z.row(i).maxCoeff();
            z.row(i).array() = (z.row(i).array() - zmax).exp();
            const double s = z.row(i).sum();
            z.row(i) /= s;
            // -log p_y computed from the shifted logits for stability
            Eigen::Index yi = 0;
            onehot_.row(i).maxCoeff(&yi);
            loss -= std::log(std::max(z(i, yi), std::numeric_limits<double>::min()));
        }
        loss /= static_cast<double>(n);
        const auto w = theta.topRows(features());
        loss += 0.5 * lambda_ * w.squaredNorm();
        if (grad) {
            *grad = xa_.transpose() * (z - onehot_) / static_cast<double>(n);
            grad->topRows(features()) += lambda_ * w;
        }
        if (probs) *probs = std::move(z);
        return loss;
    }

    /// Dense Hessian in column-major vec(theta) order, from the row probabilities.
    Eigen::MatrixXd hessian(const Eigen::MatrixXd& probs) const {
        const Eigen::Index n = xa_.rows();
        const Eigen::Index f = xa_.cols();
        const Eigen::Index c = classes();
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(f * c, f * c);
        for (Eigen::Index a = 0; a < c; ++a) {
            for (Eigen::Index b = a; b < c; ++b) {
                Eigen::VectorXd weight(n);
                for (Eigen::Index i = 0; i < n; ++i)
                    weight[i] = probs(i, a) * ((a == b ? 1.0 : 0.0) - probs(i, b));
                const Eigen::MatrixXd block = xa_.transpose() * weight.asDiagonal() * xa_ / static_cast<double>(n);
                h.block(a * f, b * f, f, f) = block;
                if (a != b) h.block(b * f, a * f, f, f) = block.transpose();
            }
        }
        for (Eigen::Index a = 0; a < c; ++a)
            for (Eigen::Index r = 0; r < f - 1; ++r) h(a * f + r, a * f + r) += lambda_;
        return h;
    }

private:
    Eigen::MatrixXd xa_;
    Eigen::MatrixXd onehot_;
    double lambda_;
};

struct LineSearchResult {
    bool accepted = false;
    double step = 0.0;
    double value = 0.0;
};

/// Backtracking Armijo search along `dir` from theta.
inline LineSearchResult armijo(const SoftmaxObjective& obj, const Eigen::MatrixXd& theta, double f0,
                               const Eigen::MatrixXd& grad, const Eigen::MatrixXd& dir) {
    const double slope = (grad.array() * dir.array()).sum();
    if (!(slope < 0.0)) return {};
    double t = 1.0;
    for (int i = 0; i < 60; ++i, t *= 0.5) {
        const double f = obj.value(theta + t * dir, nullptr);
        if (std::isfinite(f) && f <= f0 + 1e-4 * t * slope) return {true, t, f};
    }
    return {};
}

inline TrainMeta minimize_newton(const SoftmaxObjective& obj, Eigen::MatrixXd& theta, const ProbeConfig& cfg) {
    TrainMeta meta;
    const Eigen::Index f = theta.rows();
    const Eigen::Index c = theta.cols();
    Eigen::MatrixXd grad, probs;
    double value = obj.value(theta, &grad, &probs);
    for (;;) {
        meta.gradient_norm = grad.norm();
        if (meta.gradient_norm <= cfg.gradient_tolerance) {
            meta.converged = true;
            break;
        }
        if (meta.iterations >= cfg.max_iters) break;
        Eigen::MatrixXd h = obj.hessian(probs);
        // The softmax is invariant to a common bias shift, so H is singular along it.
        h.diagonal().array() += 1e-10;
        const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(grad.data(), f * c);
        const Eigen::VectorXd step = h.ldlt().solve(-g);
        Eigen::MatrixXd dir = Eigen::Map<const Eigen::MatrixXd>(step.data(), f, c);
        auto ls = armijo(obj, theta, value, grad, dir);
        if (!ls.accepted) {
            dir = -grad;
            ls = armijo(obj, theta, value, grad, dir);
        }
        ++meta.iterations;
        if (!ls.accepted) break;
        theta += ls.step * dir;
        value = obj.value(theta, &grad, &probs);
    }
    meta.final_objective = value;
    return meta;
}

inline TrainMeta minimize_lbfgs(const SoftmaxObjective& obj, Eigen::MatrixXd& theta, const ProbeConfig& cfg) {
    constexpr std::size_t kHistory = 10;
    TrainMeta meta;
    std::deque<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> history; // (s, y)
    Eigen::MatrixXd grad;
    double value = obj.value(theta, &grad);
    for (;;) {
        meta.gradient_norm = grad.norm();
        if (meta.gradient_norm <= cfg.gradient_tolerance) {
            meta.converged = true;
            break;
        }
        if (meta.iterations >= cfg.max_iters) break;

        // two-loop recursion
        Eigen::MatrixXd q = grad;
        std::vector<double> alpha(history.size());
        for (std::size_t i = history.size(); i-- > 0;) {
            const auto& [s, y] = history[i];
            alpha[i] = (s.array() * q.array()).sum() / (y.array() * s.array()).sum();
            q -= alpha[i] * y;
        }
        if (!history.empty()) {
            const auto& [s, y] = history.back();
            q *= (s.array() * y.array()).sum() / y.squaredNorm();
        }
        for (std::size_t i = 0; i < history.size(); ++i) {
            const auto& [s, y] = history[i];
            const double beta = (y.array() * q.array()).sum() / (y.array() * s.array()).sum();
            q += (alpha[i] - beta) * s;
        }
        Eigen::MatrixXd dir = -q;
        auto ls = armijo(obj, theta, value, grad, dir);
        if (!ls.accepted) {
            history.clear();
            dir = -grad;
            ls = armijo(obj, theta, value, grad, dir);
        }
        ++meta.iterations;
        if (!ls.accepted) break;
        const Eigen::MatrixXd s = ls.step * dir;
        theta += s;
        Eigen::MatrixXd next_grad;
        value = obj.value(theta, &next_grad);
        Eigen::MatrixXd y = next_grad - grad;
        grad = std::move(next_grad);
        if ((s.array() * y.array()).sum() > 1e-12 * s.norm() * y.norm()) {
            history.emplace_back(s, std::move(y));
            if (history.size() > kHistory) history.pop_front();
        }
    }
    meta.final_objective = value;
    return meta;
}

} // namespace detail

/// Fits a probe on the train split. Classification: multinomial logistic regression with an
/// L2 penalty on W (mean cross-entropy + lambda/2 ||W||^2), zero init, full batch.
/// Regression: ridge on centered data (||X w - y||^2 + lambda ||w||^2) with an unpenalized intercept.
/// Non-convergence is reported through train_meta, not thrown.
inline ProbeModel fit_probe_parameters(const Eigen::MatrixXd& x, const LabelSet& labels, const ProbeConfig& cfg) {
    detail::require_rows_match(x, labels);
    if (cfg.reg_lambda < 0.0) throw ValidationError("lambda must be >= 0");
    const auto& train = labels.splits.train;
    if (train.empty()) throw ValidationError("empty split: train");
    const TaskKind task = cfg.task.value_or(labels.task_kind);
    const Eigen::MatrixXd xt = detail::gather_rows(x, train);

    ProbeModel model;
    model.task_kind = task;
    model.reg_lambda = cfg.reg_lambda;

    if (task == TaskKind::classification) {
        const int classes = labels.num_classes > 0 ? labels.num_classes
                                                   : static_cast<int>(labels.labels.maxCoeff()) + 1;
        if (classes < 2) throw ValidationError("classification needs at least 2 classes");
        std::vector<int> y(train.size());
        std::vector<bool> seen(static_cast<std::size_t>(classes), false);
        int distinct = 0;
        for (std::size_t r = 0; r < train.size(); ++r) {
            const double v = labels.labels[static_cast<Eigen::Index>(train[r])];
            if (v < 0 || v >= classes || v != std::floor(v))
                throw ValidationError("label out of range at index " + std::to_string(train[r]));
            y[r] = static_cast<int>(v);
            if (!seen[static_cast<std::size_t>(y[r])]) {
                seen[static_cast<std::size_t>(y[r])] = true;
                ++distinct;
            }
        }
        if (distinct < 2) throw ValidationError("single-class train split: classification probe needs >= 2 classes");

        const detail::SoftmaxObjective obj(xt, y, classes, cfg.reg_lambda);
        Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(x.cols() + 1, classes);
        model.train_meta = theta.size() <= detail::kNewtonMaxParams ? detail::minimize_newton(obj, theta, cfg)
                                                                    : detail::minimize_lbfgs(obj, theta, cfg);
        model.weights = theta.topRows(x.cols());
        model.bias = theta.row(x.cols()).transpose();
        return model;
    }

    Eigen::VectorXd yt(static_cast<Eigen::Index>(train.size()));
    for (std::size_t r = 0; r < train.size(); ++r) yt[static_cast<Eigen::Index>(r)] = labels.labels[static_cast<Eigen::Index>(train[r])];
    const Eigen::RowVectorXd xmean = xt.colwise().mean();
    const double ymean = yt.mean();
    const Eigen::MatrixXd xc = xt.rowwise() - xmean;
    const Eigen::VectorXd yc = yt.array() - ymean;
    Eigen::VectorXd w;
    if (cfg.reg_lambda == 0.0) {
        w = xc.colPivHouseholderQr().solve(yc);
    } else {
        Eigen::MatrixXd gram = xc.transpose() * xc;
        gram.diagonal().array() += cfg.reg_lambda;
        w = gram.ldlt().solve(xc.transpose() * yc);
    }
    model.weights = w;
    model.bias = Eigen::VectorXd::Constant(1, ymean - xmean.dot(w));
    model.train_meta.iterations = 1;
    model.train_meta.final_objective = (xc * w - yc).squaredNorm() + cfg.reg_lambda * w.squaredNorm();
    model.train_meta.gradient_norm =
        (2.0 * (xc.transpose() * (xc * w - yc)) + 2.0 * cfg.reg_lambda * w).norm();
    model.train_meta.converged = true;
    return model;
}

inline double evaluate_probe(const ProbeModel& probe, const Eigen::MatrixXd& z, const LabelSet& labels, Split split);

inline ProbeModel fit_probe(const Eigen::MatrixXd& x, const LabelSet& labels, const ProbeConfig& cfg = {}) {
    ProbeModel model = fit_probe_parameters(x, labels, cfg);
    model.train_meta.train_score = evaluate_probe(model, x, labels, Split::train);
    return model;
}

/// Raw affine scores Z W + b, one row per row of Z.
inline Eigen::MatrixXd probe_scores(const ProbeModel& probe, const Eigen::MatrixXd& z) {
    if (z.cols() != probe.dim())
        throw ValidationError("dimension mismatch: probe expects D=" + std::to_string(probe.dim()) + ", got D=" +
                              std::to_string(z.cols()));
    Eigen::MatrixXd s = z * probe.weights;
    s.rowwise() += probe.bias.transpose();
    return s;
}

/// Predicted class per row (ties to the smaller class index).
inline std::vector<int> predict_classes(const ProbeModel& probe, const Eigen::MatrixXd& z) {
    const Eigen::MatrixXd s = probe_scores(probe, z);
    std::vector<int> out(static_cast<std::size_t>(s.rows()));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < s.cols(); ++c)
            if (s(i, c) > s(i, best)) best = c;
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

/// Accuracy (classification) or R^2 (regression) of a frozen probe on one split of Z.
/// R^2 on constant targets is 1 for an exact fit and 0 otherwise.
inline double evaluate_probe(const ProbeModel& probe, const Eigen::MatrixXd& z, const LabelSet& labels, Split split) {
    detail::require_rows_match(z, labels);
    const auto& idx = labels.splits.get(split);
    if (idx.empty()) throw ValidationError("empty split: " + to_string(split));
    const Eigen::MatrixXd zs = detail::gather_rows(z, idx);

    if (probe.task_kind == TaskKind::classification) {
        const auto pred = predict_classes(probe, zs);
        std::size_t correct = 0;
        for (std::size_t r = 0; r < idx.size(); ++r)
            if (pred[r] == static_cast<int>(labels.labels[static_cast<Eigen::Index>(idx[r])])) ++correct;
        return static_cast<double>(correct) / static_cast<double>(idx.size());
    }

    const Eigen::VectorXd pred = probe_scores(probe, zs).col(0);
    Eigen::VectorXd y(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) y[static_cast<Eigen::Index>(r)] = labels.labels[static_cast<Eigen::Index>(idx[r])];
    const double ss_res = (y - pred).squaredNorm();
    const double ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

struct SplitScores {
    double self = 0.0;
    double cross = 0.0;

    bool operator==(const SplitScores&) const = default;
};

struct TransferResult {
    double self_score = 0.0;  // test split
    double cross_score = 0.0; // test split
    double delta = 0.0;       // self - cross
    std::map<std::string, SplitScores> per_split;
    ProbeModel probe;
};

/// Fits on X/train, then scores the frozen probe on X (self) and Y (cross) for every non-empty split.
inline TransferResult cross_transfer(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const LabelSet& labels,
                                     const ProbeConfig& cfg = {}) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw ValidationError("cross transfer: X and Y must share N and D");
    if (labels.splits.test.empty()) throw ValidationError("empty split: test");
    TransferResult r;
    r.probe = fit_probe(x, labels, cfg);
    for (Split s : {Split::train, Split::dev, Split::test}) {
        if (labels.splits.get(s).empty()) continue;
        r.per_split[to_string(s)] = {evaluate_probe(r.probe, x, labels, s), evaluate_probe(r.probe, y, labels, s)};
    }
    r.self_score = r.per_split.at("test").self;
    r.cross_score = r.per_split.at("test").cross;
    r.delta = r.self_score - r.cross_score;
    return r;
}

} // namespace hrsa
