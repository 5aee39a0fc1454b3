#pragma once

#include <hrsa/activation_store.hpp>
#include <hrsa/error.hpp>
#include <hrsa/report.hpp>
#include <hrsa/sweep.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace hrsa::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2 };

struct RunConfig {
    std::vector<std::string> x_dirs;
    std::vector<std::string> y_dirs;
    std::string metrics;
    std::vector<int> k_list{kDefaultKList.begin(), kDefaultKList.end()};
    std::optional<int> layer;
    std::size_t cap = kDefaultTokenCap;
    std::uint64_t seed = 0;
    std::optional<std::string> labels_path;
    std::string out_dir;
    std::string formats = "json,csv,svg";
    bool center = false;
    bool allow_fingerprint_mismatch = false;
    std::optional<std::size_t> jobs;
    std::optional<std::string> task;
    double reg_lambda = 1e-4;
    int max_iters = 500;
    std::vector<std::int64_t> steps;
};

namespace detail {

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

template <class T>
void take(const nlohmann::json& j, std::initializer_list<const char*> keys, T& dst) {
    for (const char* k : keys)
        if (j.contains(k) && !j.at(k).is_null()) {
            dst = j.at(k).get<T>();
            return;
        }
}

inline std::vector<std::string> string_list(const nlohmann::json& v) {
    if (v.is_string()) return {v.get<std::string>()};
    return v.get<std::vector<std::string>>();
}

/// Seeds a RunConfig from a JSON config file; command-line flags are applied on top.
inline void apply_config_file(const std::filesystem::path& path, RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        if (j.contains("x")) cfg.x_dirs = string_list(j.at("x"));
        if (j.contains("y")) cfg.y_dirs = string_list(j.at("y"));
        if (j.contains("metrics")) {
            const auto& m = j.at("metrics");
            if (m.is_string()) cfg.metrics = m.get<std::string>();
            else {
                cfg.metrics.clear();
                for (const auto& s : m) cfg.metrics += (cfg.metrics.empty() ? "" : ",") + s.get<std::string>();
            }
        }
        take(j, {"k", "k_list"}, cfg.k_list);
        if (j.contains("layer") && !j.at("layer").is_null()) cfg.layer = j.at("layer").get<int>();
        take(j, {"cap"}, cfg.cap);
        take(j, {"seed"}, cfg.seed);
        if (j.contains("labels") && !j.at("labels").is_null()) cfg.labels_path = j.at("labels").get<std::string>();
        take(j, {"out", "out_dir"}, cfg.out_dir);
        if (j.contains("formats")) {
            const auto& f = j.at("formats");
            if (f.is_string()) cfg.formats = f.get<std::string>();
            else {
                cfg.formats.clear();
                for (const auto& s : f) cfg.formats += (cfg.formats.empty() ? "" : ",") + s.get<std::string>();
            }
        }
        take(j, {"center"}, cfg.center);
        take(j, {"allow_fingerprint_mismatch", "allow-fingerprint-mismatch"}, cfg.allow_fingerprint_mismatch);
        if (j.contains("jobs") && !j.at("jobs").is_null()) cfg.jobs = j.at("jobs").get<std::size_t>();
        if (j.contains("task") && !j.at("task").is_null()) cfg.task = j.at("task").get<std::string>();
        take(j, {"lambda", "reg_lambda"}, cfg.reg_lambda);
        take(j, {"max_iters", "max-iters"}, cfg.max_iters);
        take(j, {"steps"}, cfg.steps);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("invalid config " + path.string() + ": " + e.what());
    }
}

inline std::optional<std::string> find_config_arg(int argc, const char* const* argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return std::nullopt;
}

inline std::size_t resolve_jobs(const RunConfig& cfg) {
    if (cfg.jobs) return std::max<std::size_t>(1, *cfg.jobs);
    if (const char* env = std::getenv("HRSA_JOBS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

inline const std::string& single(const std::vector<std::string>& v, const char* flag) {
    if (v.size() != 1) throw ValidationError(std::string(flag) + " expects exactly one directory");
    return v.front();
}

inline SweepOptions sweep_options(const RunConfig& cfg) {
    SweepOptions o;
    o.jobs = resolve_jobs(cfg);
    o.allow_fingerprint_mismatch = cfg.allow_fingerprint_mismatch;
    o.procrustes.center = cfg.center;
    o.probe.reg_lambda = cfg.reg_lambda;
    o.probe.max_iters = cfg.max_iters;
    if (cfg.task) o.probe.task = parse_task(*cfg.task);
    return o;
}

inline void check_k_range(const std::vector<MetricSpec>& metrics, Eigen::Index n) {
    for (const auto& m : metrics)
        if (m.kind == MetricSpec::Kind::knn && (m.k < 1 || m.k > n - 1))
            throw ValidationError("k out of range: k=" + std::to_string(m.k) + " must lie in [1, " +
                                  std::to_string(n - 1) + "] for N=" + std::to_string(n));
}

inline void allow_only(const std::vector<MetricSpec>& metrics, std::initializer_list<MetricSpec::Kind> kinds,
                       const char* command) {
    for (const auto& m : metrics)
        if (std::find(kinds.begin(), kinds.end(), m.kind) == kinds.end())
            throw ValidationError("metric '" + m.name() + "' is not available in '" + command + "'");
}

struct LoadedPair {
    ActivationSet x, y;
    SubsampleResult sub;
};

inline LoadedPair load_pair(const RunConfig& cfg, report::Report& rep) {
    ActivationSet x = load_activation_set(single(cfg.x_dirs, "--x"));
    ActivationSet y = load_activation_set(single(cfg.y_dirs, "--y"));
    require_alignment(check_alignment(x, y), false, cfg.allow_fingerprint_mismatch);
    rep.inputs.models.push_back(report::describe(x, "x", cfg.x_dirs.front()));
    rep.inputs.models.push_back(report::describe(y, "y", cfg.y_dirs.front()));
    SubsampleResult sub = subsample_tokens(x, y, cfg.cap, cfg.seed);
    rep.inputs.subsample = report::SubsampleMeta{cfg.cap, cfg.seed, static_cast<std::size_t>(sub.a.n_tokens()), sub.subsampled};
    return {std::move(x), std::move(y), std::move(sub)};
}

inline std::vector<std::size_t> matched_layers(const RunConfig& cfg, const ActivationSet& x, const ActivationSet& y) {
    const std::size_t common = std::min(x.num_layers(), y.num_layers());
    if (cfg.layer) {
        if (*cfg.layer < 0 || static_cast<std::size_t>(*cfg.layer) >= common)
            throw ValidationError("--layer " + std::to_string(*cfg.layer) + " out of range (common layers: " +
                                  std::to_string(common) + ")");
        return {static_cast<std::size_t>(*cfg.layer)};
    }
    std::vector<std::size_t> out(common);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
}

inline void run_repr(const RunConfig& cfg, report::Report& rep) {
    const auto metrics = parse_metric_specs(cfg.metrics.empty() ? "dimwise,procrustes" : cfg.metrics, cfg.k_list);
    using K = MetricSpec::Kind;
    allow_only(metrics, {K::dimwise, K::procrustes, K::procrustes_residual}, "repr");
    const auto pair = load_pair(cfg, rep);
    const auto layers = matched_layers(cfg, pair.sub.a, pair.sub.b);
    for (const auto& m : metrics) {
        report::SummaryRecord summary{m.name(), {}, std::nullopt};
        double sum = 0.0;
        for (std::size_t l : layers) {
            const auto& x = pair.sub.a.layer(l).data();
            const auto& y = pair.sub.b.layer(l).data();
            if (x.cols() != y.cols())
                throw ValidationError("layer " + std::to_string(l) + ": D mismatch (" + std::to_string(x.cols()) +
                                      " vs " + std::to_string(y.cols()) + ")");
            double v = 0.0;
            if (m.kind == K::dimwise) {
                const auto r = dimwise_correlation(x, y);
                rep.results.push_back(report::make_record(l, l, r));
                v = r.mean;
            } else {
                const auto r = procrustes_align(x, y, {cfg.center});
                rep.results.push_back(report::make_record(l, l, r, cfg.center));
                v = m.kind == K::procrustes ? r.h_inv : r.residual;
            }
            summary.per_layer.push_back(v);
            sum += v;
        }
        summary.mean = sum / static_cast<double>(layers.size());
        rep.results.push_back(summary);
    }
}

inline void run_geom(const RunConfig& cfg, report::Report& rep) {
    const auto metrics = parse_metric_specs(cfg.metrics.empty() ? "cka,knn" : cfg.metrics, cfg.k_list);
    using K = MetricSpec::Kind;
    allow_only(metrics, {K::cka, K::knn}, "geom");
    const auto pair = load_pair(cfg, rep);
    check_k_range(metrics, pair.sub.a.n_tokens());
    const auto layers = matched_layers(cfg, pair.sub.a, pair.sub.b);
    for (const auto& m : metrics) {
        report::SummaryRecord summary{m.name(), {}, std::nullopt};
        double sum = 0.0;
        for (std::size_t l : layers) {
            const auto& x = pair.sub.a.layer(l).data();
            const auto& y = pair.sub.b.layer(l).data();
            double v = 0.0;
            if (m.kind == K::cka) {
                const auto r = linear_cka(x, y);
                rep.results.push_back(report::make_record(l, l, r));
                v = r.value;
            } else {
                const auto r = knn_overlap(x, y, m.k);
                rep.results.push_back(report::make_record(l, l, r));
                v = r.mean_overlap;
            }
            summary.per_layer.push_back(v);
            sum += v;
        }
        summary.mean = sum / static_cast<double>(layers.size());
        rep.results.push_back(summary);
    }
}

inline void run_func(const RunConfig& cfg, report::Report& rep) {
    if (!cfg.labels_path) throw ValidationError("func requires --labels");
    const std::string& xd = single(cfg.x_dirs, "--x");
    const std::string& yd = single(cfg.y_dirs, "--y");
    const Manifest mx = load_manifest(xd);
    const Manifest my = load_manifest(yd);
    if (mx.corpus_fingerprint != my.corpus_fingerprint && !cfg.allow_fingerprint_mismatch)
        throw ValidationError("corpus fingerprint mismatch: " + mx.corpus_fingerprint + " vs " + my.corpus_fingerprint +
                              " (pass --allow-fingerprint-mismatch to override)");
    const std::size_t last = std::min(mx.num_layers, my.num_layers) - 1;
    std::size_t layer = last;
    if (cfg.layer) {
        if (*cfg.layer < 0 || static_cast<std::size_t>(*cfg.layer) > last)
            throw ValidationError("--layer " + std::to_string(*cfg.layer) + " out of range");
        layer = static_cast<std::size_t>(*cfg.layer);
    }
    std::optional<TaskKind> task;
    if (cfg.task) task = parse_task(*cfg.task);
    const LabelSet labels = load_label_set(*cfg.labels_path, task);
    const ActivationMatrix x = load_probe_matrix(xd, layer);
    const ActivationMatrix y = load_probe_matrix(yd, layer);
    if (x.n_tokens() != y.n_tokens())
        throw ValidationError("token count mismatch: N=" + std::to_string(x.n_tokens()) + " vs N=" +
                              std::to_string(y.n_tokens()));

    rep.inputs.models.push_back({"x", xd, mx.model_id, mx.corpus_fingerprint, mx.num_layers, static_cast<std::size_t>(x.n_tokens())});
    rep.inputs.models.push_back({"y", yd, my.model_id, my.corpus_fingerprint, my.num_layers, static_cast<std::size_t>(y.n_tokens())});
    rep.inputs.labels_path = *cfg.labels_path;

    ProbeConfig pc;
    pc.task = task;
    pc.reg_lambda = cfg.reg_lambda;
    pc.max_iters = cfg.max_iters;
    rep.results.push_back(report::make_record(layer, layer, cross_transfer(x.data(), y.data(), labels, pc)));
}

inline void run_sweep(const RunConfig& cfg, report::Report& rep) {
    const auto metrics = parse_metric_specs(cfg.metrics.empty() ? "cka" : cfg.metrics, cfg.k_list);
    const auto pair = load_pair(cfg, rep);
    check_k_range(metrics, pair.sub.a.n_tokens());
    SweepOptions opt = sweep_options(cfg);
    std::optional<LabelSet> labels;
    const bool wants_probe = std::any_of(metrics.begin(), metrics.end(), [](const MetricSpec& m) { return m.kind == MetricSpec::Kind::probe; });
    if (wants_probe) {
        if (!cfg.labels_path) throw ValidationError("metric 'probe' requires --labels");
        labels = subsample_labels(load_label_set(*cfg.labels_path, opt.probe.task), pair.sub.rows);
        labels->validate();
        opt.labels = &*labels;
        rep.inputs.labels_path = *cfg.labels_path;
    }
    for (const auto& m : metrics) {
        MetricGrid grid = layer_grid(pair.sub.a, pair.sub.b, m, opt);
        grid.meta.subsample_seed = cfg.seed;
        grid.meta.subsample_cap = cfg.cap;
        const bool square = grid.rows == grid.cols;
        rep.results.push_back(grid);
        if (square) rep.results.push_back(report::make_summary(grid));
    }
}

inline void run_series(const RunConfig& cfg, report::Report& rep) {
    const auto metrics = parse_metric_specs(cfg.metrics.empty() ? "cka" : cfg.metrics, cfg.k_list);
    if (cfg.x_dirs.empty()) throw ValidationError("series requires --x");
    if (cfg.x_dirs.size() != cfg.y_dirs.size())
        throw ValidationError("series: --x and --y must list the same number of directories");
    std::vector<std::int64_t> steps = cfg.steps;
    if (steps.empty())
        for (std::size_t i = 0; i < cfg.x_dirs.size(); ++i) steps.push_back(static_cast<std::int64_t>(i));
    if (std::any_of(metrics.begin(), metrics.end(), [](const MetricSpec& m) { return m.kind == MetricSpec::Kind::probe; }))
        throw ValidationError("metric 'probe' is not available in 'series'");

    SeriesOptions opt;
    opt.sweep = sweep_options(cfg);
    opt.cap = cfg.cap;
    opt.seed = cfg.seed;
    std::optional<report::SubsampleMeta> sub_meta;
    auto loader = [&](std::size_t i) {
        auto x = load_activation_set(cfg.x_dirs[i]);
        auto y = load_activation_set(cfg.y_dirs[i]);
        if (!sub_meta) {
            const auto n = static_cast<std::size_t>(x.n_tokens());
            sub_meta = report::SubsampleMeta{cfg.cap, cfg.seed, std::min(n, cfg.cap), n > cfg.cap};
        }
        const std::string tag = "@" + std::to_string(steps.at(i));
        rep.inputs.models.push_back(report::describe(x, "x" + tag, cfg.x_dirs[i]));
        rep.inputs.models.push_back(report::describe(y, "y" + tag, cfg.y_dirs[i]));
        check_k_range(metrics, std::min<Eigen::Index>(x.n_tokens(), static_cast<Eigen::Index>(cfg.cap)));
        return std::pair{std::move(x), std::move(y)};
    };
    rep.results.push_back(checkpoint_series(cfg.x_dirs.size(), loader, steps, metrics, opt));
    rep.inputs.subsample = sub_meta;
}

inline void add_common(CLI::App* sub, RunConfig& cfg, bool multi_dir) {
    sub->add_option("--x", cfg.x_dirs, multi_dir ? "X activation directories (comma-separated, one per step)"
                                                   : "X activation directory")
        ->delimiter(',');
    sub->add_option("--y", cfg.y_dirs, multi_dir ? "Y activation directories (comma-separated, one per step)"
                                                   : "Y activation directory")
        ->delimiter(',');
    sub->add_option("--metrics", cfg.metrics, "dimwise,procrustes,procrustes_residual,cka,knn,knn:{k},probe");
    sub->add_option("--k", cfg.k_list, "k values for a bare 'knn' metric")->delimiter(',');
    sub->add_option("--layer", cfg.layer, "restrict to one layer (func: probe layer, default final)");
    sub->add_option("--cap", cfg.cap, "token subsample cap");
    sub->add_option("--seed", cfg.seed, "subsample seed");
    sub->add_option("--labels", cfg.labels_path, "directory with labels.npy and splits.json");
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--formats", cfg.formats, "comma-separated subset of json,csv,svg");
    sub->add_flag("--center", cfg.center, "center columns before Procrustes");
    sub->add_flag("--allow-fingerprint-mismatch", cfg.allow_fingerprint_mismatch,
                  "compare sets whose corpus fingerprints differ");
    sub->add_option("--jobs", cfg.jobs, "worker threads (fallback: HRSA_JOBS)");
    sub->add_option("--task", cfg.task, "probe task: classification or regression");
    sub->add_option("--lambda", cfg.reg_lambda, "probe L2 strength");
    sub->add_option("--max-iters", cfg.max_iters, "probe optimizer iteration cap");
    sub->add_option("--config", "JSON config file; flags override its values");
    if (multi_dir) sub->add_option("--steps", cfg.steps, "checkpoint steps, aligned with --x/--y")->delimiter(',');
}

} // namespace detail

/// Entry point behind the `hrsa` binary. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    RunConfig cfg;
    CLI::App app{"Hierarchical representation similarity analysis over per-layer activation dumps", "hrsa"};
    app.set_version_flag("--version", std::string("hrsa ") + kVersion);
    app.require_subcommand(1);

    struct Command {
        const char* name;
        const char* help;
        void (*fn)(const RunConfig&, report::Report&);
        bool multi_dir;
    };
    const Command commands[] = {
        {"repr", "representation level: dimension-wise correlation and Procrustes per matched layer", detail::run_repr, false},
        {"geom", "geometry level: linear CKA and k-NN overlap per matched layer", detail::run_geom, false},
        {"func", "function level: frozen linear-probe transfer", detail::run_func, false},
        {"sweep", "layer x layer grids for each metric", detail::run_sweep, false},
        {"series", "diagonal-mean trajectories over checkpoint pairs", detail::run_series, true},
    };
    std::vector<CLI::App*> subs;
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        detail::add_common(sub, cfg, c.multi_dir);
        subs.push_back(sub);
    }

    try {
        if (const auto config = detail::find_config_arg(argc, argv)) detail::apply_config_file(*config, cfg);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, err, err);
        err << app.help();
        return kValidation;
    }

    try {
        if (cfg.out_dir.empty()) throw ValidationError("--out is required");
        if (cfg.cap < 2) throw ValidationError("--cap must be >= 2");
        const auto formats = report::parse_formats(cfg.formats);
        report::Report rep;
        rep.created_at = detail::utc_timestamp();
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (!subs[i]->parsed()) continue;
            rep.command = commands[i].name;
            if (!commands[i].multi_dir && (cfg.x_dirs.empty() || cfg.y_dirs.empty()))
                throw ValidationError(std::string(commands[i].name) + " requires --x and --y");
            commands[i].fn(cfg, rep);
        }
        for (const auto& p : report::write_report(rep, cfg.out_dir, formats)) out << "wrote " << p.string() << "\n";
        return kOk;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    }
}

} // namespace hrsa::cli
