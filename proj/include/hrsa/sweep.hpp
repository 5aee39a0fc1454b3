#pragma once

#include <hrsa/activation_store.hpp>
#include <hrsa/error.hpp>
#include <hrsa/geometry.hpp>
#include <hrsa/numerics.hpp>
#include <hrsa/probe.hpp>
#include <hrsa/representation.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <iterator>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace hrsa {

inline constexpr std::size_t kDefaultTokenCap = 8192;
inline constexpr std::array<int, 3> kDefaultKList = {5, 10, 50};

/// One metric requested from a sweep: `dimwise`, `procrustes`, `procrustes_residual`, `cka`, `knn:{k}`, `probe`.
struct MetricSpec {
    enum class Kind { dimwise, procrustes, procrustes_residual, cka, knn, probe };
    Kind kind = Kind::cka;
    int k = 0; // knn only

    std::string name() const {
        switch (kind) {
        case Kind::dimwise: return "dimwise";
        case Kind::procrustes: return "procrustes";
        case Kind::procrustes_residual: return "procrustes_residual";
        case Kind::cka: return "cka";
        case Kind::knn: return "knn:" + std::to_string(k);
        case Kind::probe: return "probe";
        }
        return "?";
    }

    /// Representation-level and probe metrics compare coordinates one-to-one.
    bool needs_same_dim() const {
        return kind == Kind::dimwise || kind == Kind::procrustes || kind == Kind::procrustes_residual ||
               kind == Kind::probe;
    }

    bool operator==(const MetricSpec&) const = default;
};

/// Parses a comma-separated metric list. A bare `knn` expands to one spec per entry of k_list.
inline std::vector<MetricSpec> parse_metric_specs(const std::string& list, const std::vector<int>& k_list) {
    std::vector<MetricSpec> out;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t") + 1);
        if (tok.empty()) continue;
        using K = MetricSpec::Kind;
        if (tok == "dimwise") out.push_back({K::dimwise});
        else if (tok == "procrustes") out.push_back({K::procrustes});
        else if (tok == "procrustes_residual") out.push_back({K::procrustes_residual});
        else if (tok == "cka") out.push_back({K::cka});
        else if (tok == "probe") out.push_back({K::probe});
        else if (tok == "knn") {
            if (k_list.empty()) throw ValidationError("metric 'knn' requested but the k list is empty");
            for (int k : k_list) out.push_back({K::knn, k});
        } else if (tok.rfind("knn:", 0) == 0) {
            int k = 0;
            try {
                std::size_t used = 0;
                k = std::stoi(tok.substr(4), &used);
                if (used != tok.size() - 4) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw ValidationError("malformed metric '" + tok + "'");
            }
            out.push_back({K::knn, k});
        } else {
            throw ValidationError("unknown metric '" + tok + "'");
        }
    }
    if (out.empty()) throw ValidationError("no metrics requested");
    return out;
}

struct NullCell {
    std::size_t row = 0;
    std::size_t col = 0;
    std::string reason;

    bool operator==(const NullCell&) const = default;
};

struct GridMeta {
    std::string model_x;
    std::string model_y;
    std::size_t n_tokens_used = 0;
    std::optional<std::uint64_t> subsample_seed;
    std::optional<std::size_t> subsample_cap;

    bool operator==(const GridMeta&) const = default;
};

/// L_X x L_Y metric values; cells whose preconditions failed are empty and listed in `nulls`.
struct MetricGrid {
    std::string metric_name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::optional<double>> values; // row-major
    std::optional<int> k;
    GridMeta meta;
    std::vector<NullCell> nulls; // sorted by (row, col)

    MetricGrid() = default;
    MetricGrid(std::string name, std::size_t r, std::size_t c)
        : metric_name(std::move(name)), rows(r), cols(c), values(r * c) {}

    const std::optional<double>& at(std::size_t r, std::size_t c) const { return values.at(r * cols + c); }
    std::optional<double>& at(std::size_t r, std::size_t c) { return values.at(r * cols + c); }

    bool operator==(const MetricGrid&) const = default;
};

struct SweepOptions {
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    std::size_t max_parallel_gram = 2; // concurrent O(N^2)-memory CKA cells
    bool allow_fingerprint_mismatch = false;
    ProcrustesOptions procrustes;
    const LabelSet* labels = nullptr; // required by the probe metric
    ProbeConfig probe;
};

namespace detail {

/// Runs task(i) for i in [0, count) on up to `jobs` threads. Rethrows the first escaped exception.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task) {
    jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> workers;
        workers.reserve(jobs);
        for (std::size_t w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                    try {
                        task(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

// Neighbor sets for every layer of a set, or the reason they could not be built.
struct LayerNeighbors {
    std::optional<NeighborSets> sets;
    std::string error;
};

inline std::vector<LayerNeighbors> neighbors_per_layer(const ActivationSet& s, int k, std::size_t jobs) {
    std::vector<LayerNeighbors> out(s.num_layers());
    parallel_for(s.num_layers(), jobs, [&](std::size_t l) {
        try {
            out[l].sets = topk_cosine_neighbors(s.layer(l).data(), k);
        } catch (const ValidationError& e) {
            out[l].error = e.what();
        }
    });
    return out;
}

} // namespace detail

/// Evaluates `spec` on every layer pair (i, j). Token-count mismatch and an out-of-range k fail the
/// whole grid; per-cell failures (hidden-size mismatch, degenerate layers) leave a null cell with a reason.
inline MetricGrid layer_grid(const ActivationSet& a, const ActivationSet& b, const MetricSpec& spec,
                             const SweepOptions& opt = {}) {
    require_alignment(check_alignment(a, b), false, opt.allow_fingerprint_mismatch);
    const auto n = a.n_tokens();
    if (spec.kind == MetricSpec::Kind::knn && (spec.k < 1 || spec.k > n - 1))
        throw ValidationError("k out of range: k=" + std::to_string(spec.k) + " must lie in [1, " +
                              std::to_string(n - 1) + "] for N=" + std::to_string(n));
    if (spec.kind == MetricSpec::Kind::probe) {
        if (!opt.labels) throw ValidationError("metric 'probe' requires a label set");
        if (opt.labels->size() != static_cast<std::size_t>(n))
            throw ValidationError("length mismatch: " + std::to_string(opt.labels->size()) + " labels for N=" +
                                  std::to_string(n) + " rows");
    }

    MetricGrid grid(spec.name(), a.num_layers(), b.num_layers());
    if (spec.kind == MetricSpec::Kind::knn) grid.k = spec.k;
    grid.meta.model_x = a.model_id();
    grid.meta.model_y = b.model_id();
    grid.meta.n_tokens_used = static_cast<std::size_t>(n);

    std::vector<detail::LayerNeighbors> nx, ny;
    if (spec.kind == MetricSpec::Kind::knn) {
        nx = detail::neighbors_per_layer(a, spec.k, opt.jobs);
        ny = detail::neighbors_per_layer(b, spec.k, opt.jobs);
    }

    std::counting_semaphore<1024> gram_slots(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(opt.max_parallel_gram, 1, 1024)));
    std::vector<std::string> reasons(grid.rows * grid.cols);

    auto cell = [&](std::size_t idx) {
        const std::size_t i = idx / grid.cols;
        const std::size_t j = idx % grid.cols;
        const Eigen::MatrixXd& x = a.layer(i).data();
        const Eigen::MatrixXd& y = b.layer(j).data();
        if (spec.needs_same_dim() && x.cols() != y.cols()) {
            reasons[idx] = "D mismatch (" + std::to_string(x.cols()) + " vs " + std::to_string(y.cols()) + ")";
            return;
        }
        try {
            double v = 0.0;
            switch (spec.kind) {
            case MetricSpec::Kind::dimwise: v = dimwise_correlation(x, y).mean; break;
            case MetricSpec::Kind::procrustes: v = procrustes_align(x, y, opt.procrustes).h_inv; break;
            case MetricSpec::Kind::procrustes_residual: v = procrustes_align(x, y, opt.procrustes).residual; break;
            case MetricSpec::Kind::cka: {
                const ComputeForm form = preferred_form(x, y);
                if (form == ComputeForm::gram) {
                    gram_slots.acquire();
                    try {
                        v = linear_cka(x, y, form).value;
                    } catch (...) {
                        gram_slots.release();
                        throw;
                    }
                    gram_slots.release();
                } else {
                    v = linear_cka(x, y, form).value;
                }
                break;
            }
            case MetricSpec::Kind::knn:
                if (!nx[i].sets) throw ValidationError("X layer " + std::to_string(i) + ": " + nx[i].error);
                if (!ny[j].sets) throw ValidationError("Y layer " + std::to_string(j) + ": " + ny[j].error);
                v = knn_overlap(*nx[i].sets, *ny[j].sets).mean_overlap;
                break;
            case MetricSpec::Kind::probe: v = cross_transfer(x, y, *opt.labels, opt.probe).cross_score; break;
            }
            grid.values[idx] = v;
        } catch (const ValidationError& e) {
            reasons[idx] = e.what();
        }
    };
    detail::parallel_for(grid.rows * grid.cols, opt.jobs, cell);

    for (std::size_t idx = 0; idx < reasons.size(); ++idx)
        if (!grid.values[idx]) grid.nulls.push_back({idx / grid.cols, idx % grid.cols, reasons[idx]});
    return grid;
}

struct DiagonalSummary {
    std::vector<std::optional<double>> per_layer;
    std::optional<double> mean; // over non-null diagonal cells; empty if none
};

inline DiagonalSummary diagonal_summary(const MetricGrid& grid) {
    if (grid.rows != grid.cols)
        throw ValidationError("diagonal summary needs a square grid, got " + std::to_string(grid.rows) + "x" +
                              std::to_string(grid.cols));
    DiagonalSummary s;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < grid.rows; ++i) {
        s.per_layer.push_back(grid.at(i, i));
        if (grid.at(i, i)) {
            sum += *grid.at(i, i);
            ++count;
        }
    }
    if (count) s.mean = sum / static_cast<double>(count);
    return s;
}

namespace detail {

inline ActivationSet select_rows(const ActivationSet& s, const std::vector<std::size_t>& rows) {
    std::vector<ActivationMatrix> layers;
    layers.reserve(s.num_layers());
    for (const auto& m : s.layers()) {
        Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), m.dim());
        for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = m.data().row(static_cast<Eigen::Index>(rows[r]));
        layers.emplace_back(std::move(sub), m.layer_index(), m.model_id(), m.source_dtype(), m.corpus_fingerprint());
    }
    return ActivationSet(std::move(layers), s.model_id(), s.corpus_fingerprint());
}

} // namespace detail

struct SubsampleResult {
    ActivationSet a;
    ActivationSet b;
    std::vector<std::size_t> rows; // kept row indices, ascending
    bool subsampled = false;
};

/// Keeps the same seeded uniform sample of `cap` rows (without replacement) in every layer of both sets.
inline SubsampleResult subsample_tokens(const ActivationSet& a, const ActivationSet& b, std::size_t cap,
                                        std::uint64_t seed) {
    if (cap < 2) throw ValidationError("token cap must be >= 2");
    if (a.n_tokens() != b.n_tokens())
        throw ValidationError("token count mismatch: N=" + std::to_string(a.n_tokens()) + " vs N=" +
                              std::to_string(b.n_tokens()));
    const auto n = static_cast<std::size_t>(a.n_tokens());
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (n <= cap) return {a, b, all, false};
    std::vector<std::size_t> rows;
    rows.reserve(cap);
    std::mt19937_64 rng(seed);
    std::sample(all.begin(), all.end(), std::back_inserter(rows), cap, rng);
    return {detail::select_rows(a, rows), detail::select_rows(b, rows), rows, true};
}

/// Restricts a label set to kept rows, renumbering split indices to the new row order.
inline LabelSet subsample_labels(const LabelSet& labels, const std::vector<std::size_t>& rows) {
    std::vector<std::ptrdiff_t> remap(labels.size(), -1);
    LabelSet out;
    out.task_kind = labels.task_kind;
    out.num_classes = labels.num_classes;
    out.labels.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        remap.at(rows[r]) = static_cast<std::ptrdiff_t>(r);
        out.labels[static_cast<Eigen::Index>(r)] = labels.labels[static_cast<Eigen::Index>(rows[r])];
    }
    auto keep = [&](const std::vector<std::size_t>& in) {
        std::vector<std::size_t> kept;
        for (std::size_t idx : in)
            if (remap[idx] >= 0) kept.push_back(static_cast<std::size_t>(remap[idx]));
        return kept;
    };
    out.splits = {keep(labels.splits.train), keep(labels.splits.dev), keep(labels.splits.test)};
    return out;
}

struct CheckpointSeries {
    std::vector<std::int64_t> steps;
    std::map<std::string, std::vector<std::optional<double>>> per_metric; // aligned with steps

    bool operator==(const CheckpointSeries&) const = default;
};

struct SeriesOptions {
    SweepOptions sweep;
    std::size_t cap = kDefaultTokenCap;
    std::uint64_t seed = 0;
};

namespace detail {

inline void require_increasing(const std::vector<std::int64_t>& steps) {
    for (std::size_t i = 1; i < steps.size(); ++i)
        if (steps[i] <= steps[i - 1]) throw ValidationError("checkpoint steps must be strictly increasing");
}

} // namespace detail

/// Diagonal-mean trajectory of each metric over checkpoint pairs (x at step s vs its partner y at step s).
/// `load(i)` returns the i-th pair.
template <class PairLoader>
CheckpointSeries checkpoint_series(std::size_t count, PairLoader&& load, const std::vector<std::int64_t>& steps,
                                   const std::vector<MetricSpec>& metrics, const SeriesOptions& opt = {}) {
    if (steps.size() != count) throw ValidationError("checkpoint series: number of steps differs from number of checkpoints");
    detail::require_increasing(steps);
    CheckpointSeries series;
    series.steps = steps;
    for (const auto& m : metrics) series.per_metric[m.name()];
    for (std::size_t s = 0; s < count; ++s) {
        try {
            const auto [x, y] = load(s);
            const auto sub = subsample_tokens(x, y, opt.cap, opt.seed);
            for (const auto& m : metrics) {
                const MetricGrid grid = layer_grid(sub.a, sub.b, m, opt.sweep);
                series.per_metric[m.name()].push_back(diagonal_summary(grid).mean);
            }
        } catch (const ValidationError& e) {
            throw ValidationError("step " + std::to_string(steps[s]) + ": " + e.what());
        }
    }
    return series;
}

inline CheckpointSeries checkpoint_series(const std::vector<std::pair<ActivationSet, ActivationSet>>& pairs,
                                          const std::vector<std::int64_t>& steps,
                                          const std::vector<MetricSpec>& metrics, const SeriesOptions& opt = {}) {
    return checkpoint_series(
        pairs.size(), [&](std::size_t i) { return pairs[i]; }, steps, metrics, opt);
}

inline CheckpointSeries checkpoint_series(const std::vector<std::filesystem::path>& x_dirs,
                                          const std::vector<std::filesystem::path>& y_dirs,
                                          const std::vector<std::int64_t>& steps,
                                          const std::vector<MetricSpec>& metrics, const SeriesOptions& opt = {}) {
    if (x_dirs.size() != y_dirs.size())
        throw ValidationError("checkpoint series: x and y directory lists differ in length");
    return checkpoint_series(
        x_dirs.size(),
        [&](std::size_t i) { return std::pair{load_activation_set(x_dirs[i]), load_activation_set(y_dirs[i])}; },
        steps, metrics, opt);
}

} // namespace hrsa
