#pragma once

#include <hrsa/error.hpp>
#include <hrsa/sweep.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace hrsa::report {

using json = nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1.0";

// ---- result records -------------------------------------------------------

struct DimwiseRecord {
    std::size_t layer_x = 0, layer_y = 0;
    std::vector<std::optional<double>> per_dim;
    double mean = 0.0;
    int num_undefined = 0;
    bool operator==(const DimwiseRecord&) const = default;
};

struct ProcrustesRecord {
    std::size_t layer_x = 0, layer_y = 0;
    double residual = 0.0;
    double h_inv = 0.0;
    bool degenerate = false;
    bool centered = false;
    bool operator==(const ProcrustesRecord&) const = default;
};

struct CkaRecord {
    std::size_t layer_x = 0, layer_y = 0;
    double value = 0.0;
    double hsic_xy = 0.0, hsic_xx = 0.0, hsic_yy = 0.0;
    std::string compute_form;
    bool operator==(const CkaRecord&) const = default;
};

struct KnnRecord {
    std::size_t layer_x = 0, layer_y = 0;
    int k = 0;
    double mean_overlap = 0.0;
    std::vector<double> per_point;
    bool operator==(const KnnRecord&) const = default;
};

struct TransferRecord {
    std::size_t layer_x = 0, layer_y = 0;
    std::string task;
    double reg_lambda = 0.0;
    double self_score = 0.0;
    double cross_score = 0.0;
    double delta = 0.0;
    double abs_delta = 0.0;
    std::map<std::string, SplitScores> per_split;
    int iterations = 0;
    double final_objective = 0.0;
    bool converged = false;
    bool operator==(const TransferRecord&) const = default;
};

/// Diagonal (matched-layer) view of a grid or a per-layer sweep.
struct SummaryRecord {
    std::string metric;
    std::vector<std::optional<double>> per_layer;
    std::optional<double> mean;
    bool operator==(const SummaryRecord&) const = default;
};

using Result = std::variant<MetricGrid, SummaryRecord, DimwiseRecord, ProcrustesRecord, CkaRecord, KnnRecord,
                            TransferRecord, CheckpointSeries>;

struct ModelInput {
    std::string role;
    std::string path;
    std::string model_id;
    std::string corpus_fingerprint;
    std::size_t num_layers = 0;
    std::size_t n_tokens = 0;
    bool operator==(const ModelInput&) const = default;
};

struct SubsampleMeta {
    std::size_t cap = 0;
    std::uint64_t seed = 0;
    std::size_t n_tokens_used = 0;
    bool subsampled = false;
    bool operator==(const SubsampleMeta&) const = default;
};

struct Inputs {
    std::vector<ModelInput> models;
    std::optional<SubsampleMeta> subsample;
    std::optional<std::string> labels_path;
    bool operator==(const Inputs&) const = default;
};

struct Report {
    std::string schema_version = kSchemaVersion;
    std::string created_at;
    std::string command;
    Inputs inputs;
    std::vector<Result> results;
    bool operator==(const Report&) const = default;
};

inline ModelInput describe(const ActivationSet& s, std::string role, std::string path) {
    return {std::move(role), std::move(path), s.model_id(), s.corpus_fingerprint(), s.num_layers(),
            static_cast<std::size_t>(s.n_tokens())};
}

inline DimwiseRecord make_record(std::size_t lx, std::size_t ly, const DimwiseCorrelation& r) {
    return {lx, ly, r.per_dim, r.mean, r.num_undefined};
}

inline ProcrustesRecord make_record(std::size_t lx, std::size_t ly, const ProcrustesSolution& r, bool centered) {
    return {lx, ly, r.residual, r.h_inv, r.degenerate, centered};
}

inline CkaRecord make_record(std::size_t lx, std::size_t ly, const CkaResult& r) {
    return {lx, ly, r.value, r.hsic_xy, r.hsic_xx, r.hsic_yy, to_string(r.compute_form)};
}

inline KnnRecord make_record(std::size_t lx, std::size_t ly, const KnnOverlapResult& r) {
    return {lx, ly, r.k, r.mean_overlap, r.per_point};
}

inline TransferRecord make_record(std::size_t lx, std::size_t ly, const TransferResult& r) {
    return {lx,
            ly,
            to_string(r.probe.task_kind),
            r.probe.reg_lambda,
            r.self_score,
            r.cross_score,
            r.delta,
            std::abs(r.delta),
            r.per_split,
            r.probe.train_meta.iterations,
            r.probe.train_meta.final_objective,
            r.probe.train_meta.converged};
}

inline SummaryRecord make_summary(const MetricGrid& grid) {
    const DiagonalSummary d = diagonal_summary(grid);
    return {grid.metric_name, d.per_layer, d.mean};
}

// ---- JSON -----------------------------------------------------------------

namespace detail {

template <class T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> get_opt(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

inline json opt_vector(const std::vector<std::optional<double>>& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(opt(x));
    return a;
}

inline std::vector<std::optional<double>> get_opt_vector(const json& j) {
    std::vector<std::optional<double>> out;
    for (const auto& x : j) out.push_back(x.is_null() ? std::nullopt : std::optional<double>(x.get<double>()));
    return out;
}

} // namespace detail

inline json to_json(const MetricGrid& g) {
    json values = json::array();
    for (std::size_t r = 0; r < g.rows; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < g.cols; ++c) row.push_back(detail::opt(g.at(r, c)));
        values.push_back(std::move(row));
    }
    json nulls = json::array();
    for (const auto& n : g.nulls) nulls.push_back({{"row", n.row}, {"col", n.col}, {"reason", n.reason}});
    return {{"kind", "metric_grid"},
            {"metric", g.metric_name},
            {"rows", g.rows},
            {"cols", g.cols},
            {"k", detail::opt(g.k)},
            {"values", std::move(values)},
            {"nulls", std::move(nulls)},
            {"meta",
             {{"model_x", g.meta.model_x},
              {"model_y", g.meta.model_y},
              {"n_tokens_used", g.meta.n_tokens_used},
              {"subsample_seed", detail::opt(g.meta.subsample_seed)},
              {"subsample_cap", detail::opt(g.meta.subsample_cap)}}}};
}

inline MetricGrid grid_from_json(const json& j) {
    MetricGrid g(j.at("metric").get<std::string>(), j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    g.k = detail::get_opt<int>(j, "k");
    const auto& values = j.at("values");
    if (values.size() != g.rows) throw ValidationError("metric grid row count mismatch");
    for (std::size_t r = 0; r < g.rows; ++r) {
        const auto row = detail::get_opt_vector(values.at(r));
        if (row.size() != g.cols) throw ValidationError("metric grid column count mismatch");
        for (std::size_t c = 0; c < g.cols; ++c) g.at(r, c) = row[c];
    }
    for (const auto& n : j.at("nulls"))
        g.nulls.push_back({n.at("row").get<std::size_t>(), n.at("col").get<std::size_t>(), n.at("reason").get<std::string>()});
    const auto& m = j.at("meta");
    g.meta.model_x = m.at("model_x").get<std::string>();
    g.meta.model_y = m.at("model_y").get<std::string>();
    g.meta.n_tokens_used = m.at("n_tokens_used").get<std::size_t>();
    g.meta.subsample_seed = detail::get_opt<std::uint64_t>(m, "subsample_seed");
    g.meta.subsample_cap = detail::get_opt<std::size_t>(m, "subsample_cap");
    return g;
}

inline json to_json(const Result& result) {
    return std::visit(
        [](const auto& r) -> json {
            using T = std::decay_t<decltype(r)>;
            if constexpr (std::is_same_v<T, MetricGrid>) {
                return to_json(r);
            } else if constexpr (std::is_same_v<T, SummaryRecord>) {
                return {{"kind", "diagonal_summary"},
                        {"metric", r.metric},
                        {"per_layer", detail::opt_vector(r.per_layer)},
                        {"mean", detail::opt(r.mean)}};
            } else if constexpr (std::is_same_v<T, DimwiseRecord>) {
                return {{"kind", "dimwise"},         {"layer_x", r.layer_x}, {"layer_y", r.layer_y},
                        {"per_dim", detail::opt_vector(r.per_dim)}, {"mean", r.mean},
                        {"num_undefined", r.num_undefined}};
            } else if constexpr (std::is_same_v<T, ProcrustesRecord>) {
                return {{"kind", "procrustes"}, {"layer_x", r.layer_x},       {"layer_y", r.layer_y},
                        {"residual", r.residual}, {"h_inv", r.h_inv},         {"degenerate", r.degenerate},
                        {"centered", r.centered}};
            } else if constexpr (std::is_same_v<T, CkaRecord>) {
                return {{"kind", "cka"},        {"layer_x", r.layer_x}, {"layer_y", r.layer_y},
                        {"value", r.value},     {"hsic_xy", r.hsic_xy}, {"hsic_xx", r.hsic_xx},
                        {"hsic_yy", r.hsic_yy}, {"compute_form", r.compute_form}};
            } else if constexpr (std::is_same_v<T, KnnRecord>) {
                return {{"kind", "knn_overlap"}, {"layer_x", r.layer_x},           {"layer_y", r.layer_y},
                        {"k", r.k},              {"mean_overlap", r.mean_overlap}, {"per_point", r.per_point}};
            } else if constexpr (std::is_same_v<T, TransferRecord>) {
                json splits = json::object();
                for (const auto& [name, s] : r.per_split) splits[name] = {{"self", s.self}, {"cross", s.cross}};
                return {{"kind", "probe_transfer"},
                        {"layer_x", r.layer_x},
                        {"layer_y", r.layer_y},
                        {"task", r.task},
                        {"reg_lambda", r.reg_lambda},
                        {"self_score", r.self_score},
                        {"cross_score", r.cross_score},
                        {"delta", r.delta},
                        {"abs_delta", r.abs_delta},
                        {"per_split", std::move(splits)},
                        {"train_meta",
                         {{"iterations", r.iterations},
                          {"final_objective", r.final_objective},
                          {"converged", r.converged}}}};
            } else {
                json per_metric = json::object();
                for (const auto& [name, v] : r.per_metric) per_metric[name] = detail::opt_vector(v);
                return {{"kind", "checkpoint_series"}, {"steps", r.steps}, {"per_metric", std::move(per_metric)}};
            }
        },
        result);
}

inline Result result_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "metric_grid") return grid_from_json(j);
    if (kind == "diagonal_summary")
        return SummaryRecord{j.at("metric").get<std::string>(), detail::get_opt_vector(j.at("per_layer")),
                             detail::get_opt<double>(j, "mean")};
    if (kind == "dimwise")
        return DimwiseRecord{j.at("layer_x").get<std::size_t>(), j.at("layer_y").get<std::size_t>(),
                             detail::get_opt_vector(j.at("per_dim")), j.at("mean").get<double>(),
                             j.at("num_undefined").get<int>()};
    if (kind == "procrustes")
        return ProcrustesRecord{j.at("layer_x").get<std::size_t>(), j.at("layer_y").get<std::size_t>(),
                                j.at("residual").get<double>(),     j.at("h_inv").get<double>(),
                                j.at("degenerate").get<bool>(),     j.at("centered").get<bool>()};
    if (kind == "cka")
        return CkaRecord{j.at("layer_x").get<std::size_t>(), j.at("layer_y").get<std::size_t>(),
                         j.at("value").get<double>(),        j.at("hsic_xy").get<double>(),
                         j.at("hsic_xx").get<double>(),      j.at("hsic_yy").get<double>(),
                         j.at("compute_form").get<std::string>()};
    if (kind == "knn_overlap")
        return KnnRecord{j.at("layer_x").get<std::size_t>(), j.at("layer_y").get<std::size_t>(), j.at("k").get<int>(),
                         j.at("mean_overlap").get<double>(), j.at("per_point").get<std::vector<double>>()};
    if (kind == "probe_transfer") {
        TransferRecord r;
        r.layer_x = j.at("layer_x").get<std::size_t>();
        r.layer_y = j.at("layer_y").get<std::size_t>();
        r.task = j.at("task").get<std::string>();
        r.reg_lambda = j.at("reg_lambda").get<double>();
        r.self_score = j.at("self_score").get<double>();
        r.cross_score = j.at("cross_score").get<double>();
        r.delta = j.at("delta").get<double>();
        r.abs_delta = j.at("abs_delta").get<double>();
        for (const auto& [name, s] : j.at("per_split").items())
            r.per_split[name] = {s.at("self").get<double>(), s.at("cross").get<double>()};
        const auto& meta = j.at("train_meta");
        r.iterations = meta.at("iterations").get<int>();
        r.final_objective = meta.at("final_objective").get<double>();
        r.converged = meta.at("converged").get<bool>();
        return r;
    }
    if (kind == "checkpoint_series") {
        CheckpointSeries s;
        s.steps = j.at("steps").get<std::vector<std::int64_t>>();
        for (const auto& [name, v] : j.at("per_metric").items()) s.per_metric[name] = detail::get_opt_vector(v);
        return s;
    }
    throw ValidationError("unknown result kind '" + kind + "'");
}

inline json to_json(const Report& r) {
    json models = json::array();
    for (const auto& m : r.inputs.models)
        models.push_back({{"role", m.role},
                          {"path", m.path},
                          {"model_id", m.model_id},
                          {"corpus_fingerprint", m.corpus_fingerprint},
                          {"num_layers", m.num_layers},
                          {"n_tokens", m.n_tokens}});
    json subsample = nullptr;
    if (r.inputs.subsample)
        subsample = {{"cap", r.inputs.subsample->cap},
                     {"seed", r.inputs.subsample->seed},
                     {"n_tokens_used", r.inputs.subsample->n_tokens_used},
                     {"subsampled", r.inputs.subsample->subsampled}};
    json results = json::array();
    for (const auto& res : r.results) results.push_back(to_json(res));
    return {{"schema_version", r.schema_version},
            {"created_at", r.created_at},
            {"command", r.command},
            {"inputs", {{"models", std::move(models)}, {"subsample", std::move(subsample)}, {"labels_path", detail::opt(r.inputs.labels_path)}}},
            {"results", std::move(results)}};
}

inline Report report_from_json(const json& j) {
    Report r;
    try {
        r.schema_version = j.at("schema_version").get<std::string>();
        r.created_at = j.at("created_at").get<std::string>();
        r.command = j.at("command").get<std::string>();
        const auto& in = j.at("inputs");
        for (const auto& m : in.at("models"))
            r.inputs.models.push_back({m.at("role").get<std::string>(), m.at("path").get<std::string>(),
                                       m.at("model_id").get<std::string>(), m.at("corpus_fingerprint").get<std::string>(),
                                       m.at("num_layers").get<std::size_t>(), m.at("n_tokens").get<std::size_t>()});
        if (!in.at("subsample").is_null()) {
            const auto& s = in.at("subsample");
            r.inputs.subsample = SubsampleMeta{s.at("cap").get<std::size_t>(), s.at("seed").get<std::uint64_t>(),
                                               s.at("n_tokens_used").get<std::size_t>(), s.at("subsampled").get<bool>()};
        }
        r.inputs.labels_path = detail::get_opt<std::string>(in, "labels_path");
        for (const auto& res : j.at("results")) r.results.push_back(result_from_json(res));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed report: ") + e.what());
    }
    return r;
}

inline std::string serialize(const Report& r) { return to_json(r).dump(2) + "\n"; }

inline Report parse(const std::string& text) { return report_from_json(json::parse(text)); }

// ---- CSV / SVG --------------------------------------------------------------

inline std::string format_sig9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

/// Header row of column layer indices, one row per X layer; null cells left empty.
inline std::string grid_csv(const MetricGrid& g) {
    std::string out = "layer";
    for (std::size_t c = 0; c < g.cols; ++c) out += "," + std::to_string(c);
    out += "\n";
    for (std::size_t r = 0; r < g.rows; ++r) {
        out += std::to_string(r);
        for (std::size_t c = 0; c < g.cols; ++c) {
            out += ",";
            if (g.at(r, c)) out += format_sig9(*g.at(r, c));
        }
        out += "\n";
    }
    return out;
}

struct Rgb {
    double r, g, b;
};

/// Viridis sampled at five stops, linearly interpolated; t in [0, 1].
inline std::string colormap(double t) {
    static constexpr std::array<Rgb, 5> stops = {
        Rgb{68, 1, 84}, Rgb{59, 82, 139}, Rgb{33, 145, 140}, Rgb{94, 201, 98}, Rgb{253, 231, 37}};
    t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
    const auto lo = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
    const double f = t - static_cast<double>(lo);
    auto mix = [&](double a, double b) { return static_cast<int>(std::lround(a + (b - a) * f)); };
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", mix(stops[lo].r, stops[lo + 1].r), mix(stops[lo].g, stops[lo + 1].g),
                  mix(stops[lo].b, stops[lo + 1].b));
    return buf;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += ch;
        }
    }
    return out;
}

/// SVG 1.1 heatmap: X layers down, Y layers across, linear color scale over the non-null range.
inline std::string grid_svg(const MetricGrid& g) {
    constexpr int cell = 32, left = 70, top = 50, legend = 90;
    const int width = left + static_cast<int>(g.cols) * cell + legend;
    const int height = top + static_cast<int>(g.rows) * cell + 50;

    std::optional<double> lo, hi;
    for (const auto& v : g.values)
        if (v) {
            lo = lo ? std::min(*lo, *v) : *v;
            hi = hi ? std::max(*hi, *v) : *v;
        }
    const bool degenerate = lo && *hi == *lo;

    char num[32];
    auto exact = [&](double v) {
        std::snprintf(num, sizeof num, "%.17g", v);
        return std::string(num);
    };

    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << xml_escape(g.metric_name) << " ("
      << xml_escape(g.meta.model_x) << " vs " << xml_escape(g.meta.model_y) << ")</text>\n"
      << "<text x=\"" << left << "\" y=\"" << top - 8 << "\">Y layer</text>\n"
      << "<text x=\"10\" y=\"" << top + 12 << "\">X layer</text>\n";
    for (std::size_t c = 0; c < g.cols; ++c)
        s << "<text x=\"" << left + static_cast<int>(c) * cell + cell / 2 << "\" y=\"" << top + static_cast<int>(g.rows) * cell + 14
          << "\" text-anchor=\"middle\">" << c << "</text>\n";
    for (std::size_t r = 0; r < g.rows; ++r) {
        s << "<text x=\"" << left - 6 << "\" y=\"" << top + static_cast<int>(r) * cell + cell / 2 + 4
          << "\" text-anchor=\"end\">" << r << "</text>\n";
        for (std::size_t c = 0; c < g.cols; ++c) {
            const int x = left + static_cast<int>(c) * cell;
            const int y = top + static_cast<int>(r) * cell;
            const auto& v = g.at(r, c);
            std::string fill = "#d9d9d9";
            std::string tip = "x=" + std::to_string(r) + ", y=" + std::to_string(c) + ": null";
            if (v) {
                fill = degenerate ? colormap(0.5) : colormap((*v - *lo) / (*hi - *lo));
                tip = "x=" + std::to_string(r) + ", y=" + std::to_string(c) + ": " + exact(*v);
            } else {
                for (const auto& n : g.nulls)
                    if (n.row == r && n.col == c) tip += " (" + n.reason + ")";
            }
            s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
              << fill << "\" stroke=\"#ffffff\"><title>" << xml_escape(tip) << "</title></rect>\n";
        }
    }
    const int lx = left + static_cast<int>(g.cols) * cell + 20;
    if (lo) {
        for (int i = 0; i < 10; ++i)
            s << "<rect x=\"" << lx << "\" y=\"" << top + (9 - i) * 10 << "\" width=\"14\" height=\"10\" fill=\""
              << (degenerate ? colormap(0.5) : colormap(i / 9.0)) << "\"/>\n";
        s << "<text x=\"" << lx + 18 << "\" y=\"" << top + 8 << "\">" << format_sig9(*hi) << "</text>\n"
          << "<text x=\"" << lx + 18 << "\" y=\"" << top + 100 << "\">" << format_sig9(*lo) << "</text>\n";
    }
    if (degenerate)
        s << "<text x=\"" << left << "\" y=\"" << height - 10 << "\">degenerate range: all values equal "
          << format_sig9(*lo) << "</text>\n";
    else if (!lo)
        s << "<text x=\"" << left << "\" y=\"" << height - 10 << "\">no values: every cell is null</text>\n";
    s << "</svg>\n";
    return s.str();
}

enum class Format { json, csv, svg };

inline std::set<Format> parse_formats(const std::string& list) {
    std::set<Format> out;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok == "json") out.insert(Format::json);
        else if (tok == "csv") out.insert(Format::csv);
        else if (tok == "svg") out.insert(Format::svg);
        else if (!tok.empty()) throw ValidationError("unknown format '" + tok + "'");
    }
    return out;
}

/// File-name-safe form of a metric name (`knn:5` -> `knn_5`).
inline std::string file_stem(const std::string& metric) {
    std::string out = metric;
    std::replace_if(out.begin(), out.end(), [](char ch) { return !(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-'); }, '_');
    return out;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

} // namespace detail

/// Writes report.json (always) plus grid_{metric}.csv / heatmap_{metric}.svg per grid as requested.
/// Returns the written paths.
inline std::vector<std::filesystem::path> write_report(const Report& report, const std::filesystem::path& out_dir,
                                                       const std::set<Format>& formats) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    const auto json_path = out_dir / "report.json";
    detail::write_text(json_path, serialize(report));
    written.push_back(json_path);
    for (const auto& res : report.results) {
        const auto* grid = std::get_if<MetricGrid>(&res);
        if (!grid) continue;
        if (formats.contains(Format::csv)) {
            const auto p = out_dir / ("grid_" + file_stem(grid->metric_name) + ".csv");
            detail::write_text(p, grid_csv(*grid));
            written.push_back(p);
        }
        if (formats.contains(Format::svg)) {
            const auto p = out_dir / ("heatmap_" + file_stem(grid->metric_name) + ".svg");
            detail::write_text(p, grid_svg(*grid));
            written.push_back(p);
        }
    }
    return written;
}

} // namespace hrsa::report
