#pragma once

#include <hrsa/error.hpp>
#include <hrsa/npy.hpp>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hrsa {

enum class SourceDtype { f32, f64, bf16 };

inline std::string to_string(SourceDtype d) {
    switch (d) {
    case SourceDtype::f32: return "f32";
    case SourceDtype::f64: return "f64";
    case SourceDtype::bf16: return "bf16";
    }
    return "?";
}

inline SourceDtype parse_dtype(const std::string& s) {
    if (s == "f32" || s == "float32") return SourceDtype::f32;
    if (s == "f64" || s == "float64") return SourceDtype::f64;
    if (s == "bf16" || s == "bfloat16") return SourceDtype::bf16;
    throw ValidationError("unsupported dtype '" + s + "'");
}

/// One layer's token x feature matrix, always held in double precision.
class ActivationMatrix {
public:
    ActivationMatrix(Eigen::MatrixXd data, int layer_index, std::string model_id = {},
                     SourceDtype source_dtype = SourceDtype::f64, std::string corpus_fingerprint = {})
        : data_(std::move(data)), layer_index_(layer_index), model_id_(std::move(model_id)),
          source_dtype_(source_dtype), corpus_fingerprint_(std::move(corpus_fingerprint)) {
        if (layer_index_ < 0) throw ValidationError("layer index must be >= 0");
        if (data_.rows() < 2 || data_.cols() < 1)
            throw ValidationError("layer " + std::to_string(layer_index_) + ": need N >= 2 and D >= 1, got " +
                                  std::to_string(data_.rows()) + "x" + std::to_string(data_.cols()));
        for (Eigen::Index j = 0; j < data_.cols(); ++j)
            for (Eigen::Index i = 0; i < data_.rows(); ++i)
                if (!std::isfinite(data_(i, j)))
                    throw ValidationError("layer " + std::to_string(layer_index_) + ": non-finite entry at (" +
                                          std::to_string(i) + ", " + std::to_string(j) + ")");
    }

    const Eigen::MatrixXd& data() const { return data_; }
    Eigen::Index n_tokens() const { return data_.rows(); }
    Eigen::Index dim() const { return data_.cols(); }
    int layer_index() const { return layer_index_; }
    const std::string& model_id() const { return model_id_; }
    SourceDtype source_dtype() const { return source_dtype_; }
    const std::string& corpus_fingerprint() const { return corpus_fingerprint_; }

private:
    Eigen::MatrixXd data_;
    int layer_index_;
    std::string model_id_;
    SourceDtype source_dtype_;
    std::string corpus_fingerprint_;
};

/// Ordered per-layer activations of one model over one corpus. Immutable once built.
class ActivationSet {
public:
    ActivationSet(std::vector<ActivationMatrix> layers, std::string model_id, std::string corpus_fingerprint)
        : layers_(std::move(layers)), model_id_(std::move(model_id)),
          corpus_fingerprint_(std::move(corpus_fingerprint)) {
        if (layers_.empty()) throw ValidationError("activation set has no layers");
        const auto n = layers_.front().n_tokens();
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& m = layers_[l];
            if (m.layer_index() != static_cast<int>(l))
                throw ValidationError("layer indices must be contiguous from 0; position " + std::to_string(l) +
                                      " holds layer " + std::to_string(m.layer_index()));
            if (m.n_tokens() != n)
                throw ValidationError("layer " + std::to_string(l) + " has N=" + std::to_string(m.n_tokens()) +
                                      ", expected " + std::to_string(n));
            if (m.corpus_fingerprint() != corpus_fingerprint_)
                throw ValidationError("layer " + std::to_string(l) + " carries a different corpus fingerprint");
        }
    }

    std::size_t num_layers() const { return layers_.size(); }
    Eigen::Index n_tokens() const { return layers_.front().n_tokens(); }
    const ActivationMatrix& layer(std::size_t l) const { return layers_.at(l); }
    const std::vector<ActivationMatrix>& layers() const { return layers_; }
    const std::string& model_id() const { return model_id_; }
    const std::string& corpus_fingerprint() const { return corpus_fingerprint_; }

    /// Single hidden size if all layers agree.
    std::optional<Eigen::Index> uniform_dim() const {
        const auto d = layers_.front().dim();
        for (const auto& m : layers_)
            if (m.dim() != d) return std::nullopt;
        return d;
    }

private:
    std::vector<ActivationMatrix> layers_;
    std::string model_id_;
    std::string corpus_fingerprint_;
};

struct Manifest {
    std::string model_id;
    std::size_t num_layers = 0;
    std::size_t n_tokens = 0;
    std::size_t dim = 0;
    SourceDtype dtype = SourceDtype::f64;
    std::string corpus_fingerprint;
};

inline nlohmann::ordered_json to_json(const Manifest& m) {
    return {{"model_id", m.model_id},
            {"num_layers", m.num_layers},
            {"n_tokens", m.n_tokens},
            {"dim", m.dim},
            {"dtype", to_string(m.dtype)},
            {"corpus_fingerprint", m.corpus_fingerprint}};
}

inline std::filesystem::path layer_file_name(std::size_t l) { return "layer_" + std::to_string(l) + ".npy"; }

/// SHA-256 hex digest of the token ids, each encoded as little-endian int64.
inline std::string corpus_fingerprint(std::span<const std::int64_t> token_ids) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(token_ids.data(), token_ids.size_bytes(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": malformed JSON: " + e.what());
    }
}

inline Manifest parse_manifest(const nlohmann::json& j, const std::string& where) {
    Manifest m;
    try {
        m.model_id = j.at("model_id").get<std::string>();
        m.num_layers = j.at("num_layers").get<std::size_t>();
        m.n_tokens = j.at("n_tokens").get<std::size_t>();
        m.dim = j.at("dim").get<std::size_t>();
        m.dtype = parse_dtype(j.at("dtype").get<std::string>());
        m.corpus_fingerprint = j.at("corpus_fingerprint").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(where + ": invalid manifest: " + e.what());
    }
    if (m.num_layers == 0) throw ValidationError(where + ": num_layers must be positive");
    return m;
}

inline bool descr_matches(SourceDtype dtype, const std::string& descr) {
    switch (dtype) {
    case SourceDtype::f64: return descr == "<f8";
    case SourceDtype::f32: return descr == "<f4";
    case SourceDtype::bf16: return descr == "<u2" || descr == "<V2" || descr == "|V2" || descr == "<i2";
    }
    return false;
}

/// Decodes a 2-D NPY array into a row-major-interpreted double matrix.
inline Eigen::MatrixXd decode_matrix(const npy::Array& a, SourceDtype dtype, const std::string& where) {
    if (a.shape.size() != 2) throw ValidationError(where + ": expected a 2-D array");
    const auto rows = static_cast<Eigen::Index>(a.shape[0]);
    const auto cols = static_cast<Eigen::Index>(a.shape[1]);
    Eigen::MatrixXd out(rows, cols);
    auto value = [&](std::size_t flat) -> double {
        switch (dtype) {
        case SourceDtype::f64: return npy::element<double>(a, flat);
        case SourceDtype::f32: return static_cast<double>(npy::element<float>(a, flat));
        case SourceDtype::bf16: return static_cast<double>(npy::bf16_to_float(npy::element<std::uint16_t>(a, flat)));
        }
        return 0.0;
    };
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
            const auto flat = a.fortran_order ? static_cast<std::size_t>(j * rows + i)
                                              : static_cast<std::size_t>(i * cols + j);
            out(i, j) = value(flat);
        }
    return out;
}

inline ActivationMatrix load_layer(const std::filesystem::path& file, std::size_t layer, const Manifest& m,
                                   std::optional<std::size_t> expected_rows, std::optional<std::size_t> expected_cols) {
    const std::string where = "layer " + std::to_string(layer) + " (" + file.filename().string() + ")";
    npy::Array a;
    try {
        a = npy::read(file);
    } catch (const IoError& e) {
        throw IoError(where + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
    }
    if (!descr_matches(m.dtype, a.descr))
        throw ValidationError(where + ": NPY dtype '" + a.descr + "' does not match manifest dtype " +
                              to_string(m.dtype));
    if (a.shape.size() != 2 || (expected_rows && a.shape[0] != *expected_rows) ||
        (expected_cols && a.shape[1] != *expected_cols)) {
        std::string got = "(";
        for (std::size_t i = 0; i < a.shape.size(); ++i) got += (i ? ", " : "") + std::to_string(a.shape[i]);
        throw ValidationError(where + ": shape mismatch vs manifest, got " + got + ")");
    }
    try {
        return ActivationMatrix(decode_matrix(a, m.dtype, where), static_cast<int>(layer), m.model_id, m.dtype,
                                m.corpus_fingerprint);
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(e.what()) + " [" + file.filename().string() + "]");
    }
}

} // namespace detail

inline Manifest load_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    if (!std::filesystem::exists(path)) throw IoError("missing manifest: " + path.string());
    return detail::parse_manifest(detail::read_json_file(path), path.string());
}

/// Loads `manifest.json` plus `layer_{l}.npy` for l = 0..num_layers-1.
inline ActivationSet load_activation_set(const std::filesystem::path& dir) {
    const Manifest m = load_manifest(dir);

    static const std::regex layer_re(R"(layer_(\d+)\.npy)");
    std::set<std::size_t> present;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::smatch match;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, match, layer_re)) present.insert(std::stoull(match[1]));
    }
    for (std::size_t l = 0; l < m.num_layers; ++l)
        if (!present.contains(l))
            throw ValidationError("layer count mismatch: manifest declares " + std::to_string(m.num_layers) +
                                  " layers but " + layer_file_name(l).string() + " is missing (found " +
                                  std::to_string(present.size()) + " layer files)");
    if (present.size() != m.num_layers)
        throw ValidationError("layer count mismatch: manifest declares " + std::to_string(m.num_layers) +
                              " layers but " + std::to_string(present.size()) + " layer files exist");

    std::vector<ActivationMatrix> layers;
    layers.reserve(m.num_layers);
    for (std::size_t l = 0; l < m.num_layers; ++l)
        layers.push_back(detail::load_layer(dir / layer_file_name(l), l, m, m.n_tokens, m.dim));
    return ActivationSet(std::move(layers), m.model_id, m.corpus_fingerprint);
}

/// Writes a set in the exchange format. Payloads are bit-exact for f64.
inline void write_activation_set(const ActivationSet& set, const std::filesystem::path& dir,
                                 SourceDtype dtype = SourceDtype::f64) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const auto d = set.uniform_dim();
    if (!d) throw ValidationError("exchange format requires one hidden size across layers");

    for (std::size_t l = 0; l < set.num_layers(); ++l) {
        const Eigen::MatrixXd& x = set.layer(l).data();
        // Eigen is column-major; NPY payload is C order.
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = x;
        const std::vector<std::size_t> shape = {static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(x.cols())};
        const std::span<const double> values(rm.data(), static_cast<std::size_t>(rm.size()));
        npy::Array a;
        switch (dtype) {
        case SourceDtype::f64: a = npy::from_values<double>(values, shape, "<f8"); break;
        case SourceDtype::f32: {
            std::vector<float> f(values.begin(), values.end());
            a = npy::from_values<float>(f, shape, "<f4");
            break;
        }
        case SourceDtype::bf16: {
            std::vector<std::uint16_t> b(values.size());
            for (std::size_t i = 0; i < values.size(); ++i) {
                // round-to-nearest-even on the dropped 16 bits
                auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
                bits += 0x7fffu + ((bits >> 16) & 1u);
                b[i] = static_cast<std::uint16_t>(bits >> 16);
            }
            a = npy::from_values<std::uint16_t>(b, shape, "<u2");
            break;
        }
        }
        npy::write(dir / layer_file_name(l), a);
    }

    Manifest m{set.model_id(), set.num_layers(), static_cast<std::size_t>(set.n_tokens()),
               static_cast<std::size_t>(*d), dtype, set.corpus_fingerprint()};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << to_json(m).dump(2) << '\n';
}

struct AlignmentReport {
    bool same_N = false;
    bool same_D = false;
    bool same_fingerprint = false;
    Eigen::Index n_a = 0, n_b = 0;
    std::string fingerprint_a, fingerprint_b;
};

inline AlignmentReport check_alignment(const ActivationSet& a, const ActivationSet& b) {
    AlignmentReport r;
    r.n_a = a.n_tokens();
    r.n_b = b.n_tokens();
    r.same_N = r.n_a == r.n_b;
    const auto da = a.uniform_dim();
    const auto db = b.uniform_dim();
    r.same_D = da && db && *da == *db;
    r.fingerprint_a = a.corpus_fingerprint();
    r.fingerprint_b = b.corpus_fingerprint();
    r.same_fingerprint = r.fingerprint_a == r.fingerprint_b;
    return r;
}

/// Throws ValidationError for any requirement the report does not meet.
inline void require_alignment(const AlignmentReport& r, bool need_same_D, bool allow_fingerprint_mismatch) {
    if (!r.same_N)
        throw ValidationError("token count mismatch: N=" + std::to_string(r.n_a) + " vs N=" + std::to_string(r.n_b));
    if (!r.same_fingerprint && !allow_fingerprint_mismatch)
        throw ValidationError("corpus fingerprint mismatch: " + r.fingerprint_a + " vs " + r.fingerprint_b +
                              " (pass --allow-fingerprint-mismatch to override)");
    if (need_same_D && !r.same_D) throw ValidationError("hidden size mismatch between models");
}

enum class TaskKind { classification, regression };

inline std::string to_string(TaskKind t) { return t == TaskKind::classification ? "classification" : "regression"; }

inline TaskKind parse_task(const std::string& s) {
    if (s == "classification") return TaskKind::classification;
    if (s == "regression") return TaskKind::regression;
    throw ValidationError("unknown task kind '" + s + "'");
}

enum class Split { train, dev, test };

inline std::string to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
    }
    return "?";
}

struct Splits {
    std::vector<std::size_t> train, dev, test;

    const std::vector<std::size_t>& get(Split s) const {
        switch (s) {
        case Split::train: return train;
        case Split::dev: return dev;
        case Split::test: return test;
        }
        return train;
    }
};

/// Probe targets plus disjoint train/dev/test index lists.
struct LabelSet {
    Eigen::VectorXd labels;
    Splits splits;
    TaskKind task_kind = TaskKind::classification;
    int num_classes = 0; // classification only

    std::size_t size() const { return static_cast<std::size_t>(labels.size()); }

    void validate() const {
        std::vector<int> owner(size(), -1);
        for (Split s : {Split::train, Split::dev, Split::test}) {
            for (std::size_t idx : splits.get(s)) {
                if (idx >= size())
                    throw ValidationError("length mismatch: split " + to_string(s) + " references index " +
                                          std::to_string(idx) + " but only " + std::to_string(size()) +
                                          " labels exist");
                if (owner[idx] >= 0)
                    throw ValidationError("overlapping splits: index " + std::to_string(idx) + " appears in both " +
                                          to_string(static_cast<Split>(owner[idx])) + " and " + to_string(s));
                owner[idx] = static_cast<int>(s);
            }
        }
        for (Eigen::Index i = 0; i < labels.size(); ++i)
            if (!std::isfinite(labels[i])) throw ValidationError("label " + std::to_string(i) + " is not finite");
        if (task_kind == TaskKind::classification) {
            if (num_classes < 2) throw ValidationError("classification needs num_classes >= 2");
            for (Eigen::Index i = 0; i < labels.size(); ++i) {
                const double v = labels[i];
                if (v != std::floor(v) || v < 0 || v >= num_classes)
                    throw ValidationError("label out of range at index " + std::to_string(i) + ": " +
                                          std::to_string(static_cast<long long>(v)) + " not in [0, " +
                                          std::to_string(num_classes) + ")");
            }
        }
    }
};

/// Loads `labels.npy` (int64, or float64 for regression) and `splits.json` from a directory.
/// splits.json may carry optional "task" and "num_classes" keys; `task_override` wins over them.
inline LabelSet load_label_set(const std::filesystem::path& dir, std::optional<TaskKind> task_override = {}) {
    const auto labels_path = dir / "labels.npy";
    const auto splits_path = dir / "splits.json";
    if (!std::filesystem::exists(labels_path)) throw IoError("missing " + labels_path.string());
    if (!std::filesystem::exists(splits_path)) throw IoError("missing " + splits_path.string());

    const npy::Array a = npy::read(labels_path);
    if (a.shape.size() != 1) throw ValidationError(labels_path.string() + ": labels must be a 1-D vector");
    LabelSet ls;
    ls.labels.resize(static_cast<Eigen::Index>(a.shape[0]));
    bool integral = true;
    for (std::size_t i = 0; i < a.shape[0]; ++i) {
        double v = 0;
        if (a.descr == "<i8") v = static_cast<double>(npy::element<std::int64_t>(a, i));
        else if (a.descr == "<i4") v = static_cast<double>(npy::element<std::int32_t>(a, i));
        else if (a.descr == "<f8") {
            v = npy::element<double>(a, i);
            integral = false;
        } else throw ValidationError(labels_path.string() + ": unsupported label dtype '" + a.descr + "'");
        ls.labels[static_cast<Eigen::Index>(i)] = v;
    }

    const nlohmann::json j = detail::read_json_file(splits_path);
    try {
        ls.splits.train = j.at("train").get<std::vector<std::size_t>>();
        ls.splits.dev = j.value("dev", std::vector<std::size_t>{});
        ls.splits.test = j.at("test").get<std::vector<std::size_t>>();
        if (j.contains("task")) ls.task_kind = parse_task(j.at("task").get<std::string>());
        if (task_override) ls.task_kind = *task_override;
        if (ls.task_kind == TaskKind::classification) {
            if (!integral) throw ValidationError("classification labels must be stored as integers");
            ls.num_classes = j.contains("num_classes")
                                 ? j.at("num_classes").get<int>()
                                 : (ls.labels.size() ? static_cast<int>(ls.labels.maxCoeff()) + 1 : 0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(splits_path.string() + ": " + e.what());
    }
    ls.validate();
    return ls;
}

/// Matrix for probing: `items_layer_{l}.npy` (one row per labeled item) when present,
/// otherwise the token-level `layer_{l}.npy`.
inline ActivationMatrix load_probe_matrix(const std::filesystem::path& dir, std::size_t layer) {
    const Manifest m = load_manifest(dir);
    if (layer >= m.num_layers)
        throw ValidationError("layer " + std::to_string(layer) + " out of range for " + dir.string() + " (" +
                              std::to_string(m.num_layers) + " layers)");
    const auto items = dir / ("items_layer_" + std::to_string(layer) + ".npy");
    if (std::filesystem::exists(items)) return detail::load_layer(items, layer, m, std::nullopt, m.dim);
    return detail::load_layer(dir / layer_file_name(layer), layer, m, m.n_tokens, m.dim);
}

} // namespace hrsa
