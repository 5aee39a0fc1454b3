#pragma once

// Minimal NPY v1.0 codec. Writes headers byte-for-byte the way numpy.save does
// (sorted dict keys, growth-axis padding, 64-byte alignment).

#include <hrsa/error.hpp>

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <regex>
#include <span>
#include <string>
#include <vector>

namespace hrsa::npy {

static_assert(std::endian::native == std::endian::little, "NPY codec assumes a little-endian host");

inline constexpr std::array<char, 6> kMagic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};
inline constexpr std::size_t kAlign = 64;
inline constexpr std::size_t kGrowthAxisMaxDigits = 21;

struct Array {
    std::string descr;                // e.g. "<f8"
    bool fortran_order = false;
    std::vector<std::size_t> shape;
    std::vector<std::byte> payload;   // raw little-endian element bytes

    std::size_t num_elements() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }
};

/// Size in bytes of one element for the descriptors this codec understands; 0 if unknown.
inline std::size_t item_size(const std::string& descr) {
    if (descr.size() < 3) return 0;
    const char endian = descr[0];
    if (endian != '<' && endian != '|' && endian != '=') return 0;
    const std::string kind = descr.substr(1);
    if (kind == "f8" || kind == "i8" || kind == "u8") return 8;
    if (kind == "f4" || kind == "i4" || kind == "u4") return 4;
    if (kind == "u2" || kind == "i2" || kind == "V2" || kind == "f2") return 2;
    if (kind == "u1" || kind == "i1" || kind == "b1") return 1;
    return 0;
}

namespace detail {

inline std::string shape_repr(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) s += ", ";
        s += std::to_string(shape[i]);
    }
    if (shape.size() == 1) s += ",";
    s += ")";
    return s;
}

inline std::string build_header(const Array& a) {
    std::string dict = "{'descr': '" + a.descr + "', 'fortran_order': " +
                       (a.fortran_order ? "True" : "False") + ", 'shape': " + shape_repr(a.shape) +
                       ", }";
    if (!a.shape.empty()) {
        const std::size_t growth = a.fortran_order ? a.shape.back() : a.shape.front();
        const std::size_t digits = std::to_string(growth).size();
        if (digits < kGrowthAxisMaxDigits) dict.append(kGrowthAxisMaxDigits - digits, ' ');
    }
    const std::size_t hlen = dict.size() + 1;
    const std::size_t pad = kAlign - ((kMagic.size() + 2 + 2 + hlen) % kAlign);
    dict.append(pad, ' ');
    dict.push_back('\n');
    return dict;
}

inline Array parse_header(const std::string& header, const std::string& where) {
    static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
    static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
    static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
    std::smatch m;
    Array a;
    if (!std::regex_search(header, m, descr_re)) throw IoError(where + ": NPY header lacks 'descr'");
    a.descr = m[1];
    if (!std::regex_search(header, m, order_re)) throw IoError(where + ": NPY header lacks 'fortran_order'");
    a.fortran_order = m[1] == "True";
    if (!std::regex_search(header, m, shape_re)) throw IoError(where + ": NPY header lacks 'shape'");
    const std::string dims = m[1];
    static const std::regex int_re(R"(\d+)");
    for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re); it != std::sregex_iterator(); ++it)
        a.shape.push_back(static_cast<std::size_t>(std::stoull(it->str())));
    return a;
}

} // namespace detail

inline Array read(const std::filesystem::path& path) {
    const std::string where = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + where);

    std::array<char, 6> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw IoError(where + ": not an NPY file");
    unsigned char version[2] = {};
    in.read(reinterpret_cast<char*>(version), 2);
    std::size_t header_len = 0;
    if (version[0] == 1) {
        unsigned char len[2] = {};
        in.read(reinterpret_cast<char*>(len), 2);
        header_len = std::size_t{len[0]} | (std::size_t{len[1]} << 8);
    } else if (version[0] == 2 || version[0] == 3) {
        unsigned char len[4] = {};
        in.read(reinterpret_cast<char*>(len), 4);
        header_len = std::size_t{len[0]} | (std::size_t{len[1]} << 8) | (std::size_t{len[2]} << 16) |
                     (std::size_t{len[3]} << 24);
    } else {
        throw IoError(where + ": unsupported NPY version " + std::to_string(version[0]));
    }
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError(where + ": truncated NPY header");

    Array a = detail::parse_header(header, where);
    const std::size_t isz = item_size(a.descr);
    if (isz == 0) throw ValidationError(where + ": unsupported dtype '" + a.descr + "'");
    a.payload.resize(a.num_elements() * isz);
    in.read(reinterpret_cast<char*>(a.payload.data()), static_cast<std::streamsize>(a.payload.size()));
    if (!in) throw IoError(where + ": truncated NPY payload");
    return a;
}

inline void write(const std::filesystem::path& path, const Array& a) {
    if (item_size(a.descr) == 0) throw ValidationError("cannot write unsupported dtype '" + a.descr + "'");
    if (a.payload.size() != a.num_elements() * item_size(a.descr))
        throw ValidationError("NPY payload size does not match shape");
    const std::string header = detail::build_header(a);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(kMagic.data(), kMagic.size());
    const char version[2] = {1, 0};
    out.write(version, 2);
    const char len[2] = {static_cast<char>(header.size() & 0xff), static_cast<char>((header.size() >> 8) & 0xff)};
    out.write(len, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(a.payload.data()), static_cast<std::streamsize>(a.payload.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

template <class T>
Array from_values(std::span<const T> values, std::vector<std::size_t> shape, std::string descr) {
    Array a;
    a.descr = std::move(descr);
    a.shape = std::move(shape);
    if (item_size(a.descr) != sizeof(T)) throw ValidationError("descr does not match element type");
    a.payload.resize(values.size() * sizeof(T));
    std::memcpy(a.payload.data(), values.data(), a.payload.size());
    return a;
}

/// Copies element i out of the payload as T (no conversion).
template <class T>
T element(const Array& a, std::size_t i) {
    T v;
    std::memcpy(&v, a.payload.data() + i * sizeof(T), sizeof(T));
    return v;
}

/// bfloat16 bit pattern -> float32 (upper half of the IEEE single).
inline float bf16_to_float(std::uint16_t bits) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

} // namespace hrsa::npy
