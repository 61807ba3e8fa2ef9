#pragma once

// Minimal NPY v1.0 reader/writer for the dtypes the container format uses:
// little-endian float32/float64 and uint8. C order only.

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include "loce/common.hpp"

namespace loce::npy {

static_assert(std::endian::native == std::endian::little, "NPY payloads are written in native little-endian order");

enum class DType { float32, float64, uint8 };

inline std::size_t item_size(DType t) {
    switch (t) {
        case DType::float32: return 4;
        case DType::float64: return 8;
        case DType::uint8: return 1;
    }
    return 0;
}

inline const char* descr(DType t) {
    switch (t) {
        case DType::float32: return "<f4";
        case DType::float64: return "<f8";
        case DType::uint8: return "|u1";
    }
    return "";
}

struct Header {
    DType dtype = DType::float32;
    std::vector<std::size_t> shape;
    std::size_t data_offset = 0;

    std::size_t count() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }
};

template <typename T>
struct Array {
    std::vector<std::size_t> shape;
    std::vector<T> data;
};

namespace detail {

inline constexpr std::array<char, 6> kMagic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

inline std::string dict_value(const std::string& dict, const std::string& key, const std::string& path) {
    const std::string quoted = "'" + key + "'";
    auto pos = dict.find(quoted);
    if (pos == std::string::npos) {
        throw DataError("npy header of " + path + " lacks key " + key);
    }
    pos = dict.find(':', pos + quoted.size());
    if (pos == std::string::npos) {
        throw DataError("malformed npy header in " + path);
    }
    ++pos;
    while (pos < dict.size() && dict[pos] == ' ') {
        ++pos;
    }
    if (pos >= dict.size()) {
        throw DataError("malformed npy header in " + path);
    }
    std::size_t end;
    if (dict[pos] == '\'') {
        end = dict.find('\'', pos + 1);
        if (end == std::string::npos) {
            throw DataError("malformed npy header in " + path);
        }
        return dict.substr(pos + 1, end - pos - 1);
    }
    if (dict[pos] == '(') {
        end = dict.find(')', pos);
        if (end == std::string::npos) {
            throw DataError("malformed npy header in " + path);
        }
        return dict.substr(pos, end - pos + 1);
    }
    end = dict.find_first_of(",}", pos);
    return dict.substr(pos, end - pos);
}

inline DType parse_descr(const std::string& d, const std::string& path) {
    if (d == "<f4") return DType::float32;
    if (d == "<f8") return DType::float64;
    if (d == "|u1" || d == "<u1" || d == "u1" || d == "|b1") return DType::uint8;
    throw DataError("unsupported dtype '" + d + "' in " + path);
}

inline std::vector<std::size_t> parse_shape(const std::string& tuple, const std::string& path) {
    std::vector<std::size_t> shape;
    std::string body = tuple.substr(1, tuple.size() - 2);
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto first = item.find_first_not_of(' ');
        if (first == std::string::npos) {
            continue;
        }
        item = item.substr(first);
        item.erase(item.find_last_not_of(" L") + 1);
        try {
            std::size_t used = 0;
            shape.push_back(std::stoull(item, &used));
            if (used != item.size()) {
                throw DataError("bad shape entry");
            }
        } catch (const std::exception&) {
            throw DataError("malformed shape " + tuple + " in " + path);
        }
    }
    return shape;
}

inline Header read_header(std::istream& in, const std::string& path) {
    std::array<char, 6> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) {
        throw DataError("not an npy file: " + path);
    }
    unsigned char version[2];
    in.read(reinterpret_cast<char*>(version), 2);
    std::size_t header_len = 0;
    std::size_t prefix = 0;
    if (version[0] == 1) {
        unsigned char len[2];
        in.read(reinterpret_cast<char*>(len), 2);
        header_len = len[0] | (len[1] << 8);
        prefix = 10;
    } else if (version[0] == 2 || version[0] == 3) {
        unsigned char len[4];
        in.read(reinterpret_cast<char*>(len), 4);
        header_len = len[0] | (len[1] << 8) | (len[2] << 16) | (static_cast<std::size_t>(len[3]) << 24);
        prefix = 12;
    } else {
        throw DataError("unsupported npy version in " + path);
    }
    std::string dict(header_len, '\0');
    in.read(dict.data(), static_cast<std::streamsize>(header_len));
    if (!in) {
        throw DataError("truncated npy header in " + path);
    }
    Header h;
    h.dtype = parse_descr(dict_value(dict, "descr", path), path);
    auto fortran = dict_value(dict, "fortran_order", path);
    if (fortran.find("True") != std::string::npos) {
        throw DataError("fortran-ordered arrays are not supported: " + path);
    }
    h.shape = parse_shape(dict_value(dict, "shape", path), path);
    h.data_offset = prefix + header_len;
    return h;
}

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) {
        return DType::float32;
    } else if constexpr (std::is_same_v<T, double>) {
        return DType::float64;
    } else {
        static_assert(std::is_same_v<T, std::uint8_t>, "unsupported npy element type");
        return DType::uint8;
    }
}

}  // namespace detail

inline Header read_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("missing array: " + path.string());
    }
    return detail::read_header(in, path.string());
}

// Reads any supported dtype and converts to T. Narrowing float64 -> float32 is
// allowed; reading a float array as uint8 is not.
template <typename T>
Array<T> read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("missing array: " + path.string());
    }
    Header h = detail::read_header(in, path.string());
    const std::size_t n = h.count();
    std::vector<char> raw(n * item_size(h.dtype));
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        throw DataError("truncated npy payload in " + path.string());
    }
    Array<T> out;
    out.shape = h.shape;
    out.data.resize(n);
    constexpr DType want = detail::dtype_of<T>();
    if (h.dtype == want) {
        std::memcpy(out.data.data(), raw.data(), raw.size());
        return out;
    }
    if constexpr (want == DType::uint8) {
        throw DataError("expected uint8 array in " + path.string());
    } else {
        if (h.dtype == DType::float32) {
            for (std::size_t i = 0; i < n; ++i) {
                float v;
                std::memcpy(&v, raw.data() + 4 * i, 4);
                out.data[i] = static_cast<T>(v);
            }
        } else if (h.dtype == DType::float64) {
            for (std::size_t i = 0; i < n; ++i) {
                double v;
                std::memcpy(&v, raw.data() + 8 * i, 8);
                out.data[i] = static_cast<T>(v);
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                out.data[i] = static_cast<T>(static_cast<std::uint8_t>(raw[i]));
            }
        }
    }
    return out;
}

inline std::string make_header(DType dtype, std::span<const std::size_t> shape) {
    std::string shape_str = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        shape_str += std::to_string(shape[i]);
        if (shape.size() == 1 || i + 1 < shape.size()) {
            shape_str += ",";
            if (i + 1 < shape.size()) {
                shape_str += " ";
            }
        }
    }
    shape_str += ")";
    std::string dict = std::string("{'descr': '") + descr(dtype) + "', 'fortran_order': False, 'shape': " +
                       shape_str + ", }";
    // Pad so that magic + version + length + dict is a multiple of 64 bytes.
    const std::size_t unpadded = 10 + dict.size() + 1;
    const std::size_t padding = (64 - unpadded % 64) % 64;
    dict.append(padding, ' ');
    dict.push_back('\n');
    return dict;
}

template <typename T>
void write(const std::filesystem::path& path, std::span<const std::size_t> shape, std::span<const T> data) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    require(n == data.size(), "npy write: payload size does not match shape");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open for writing: " + path.string());
    }
    const std::string dict = make_header(detail::dtype_of<T>(), shape);
    out.write(detail::kMagic.data(), detail::kMagic.size());
    const char version[2] = {1, 0};
    out.write(version, 2);
    const std::uint16_t len = static_cast<std::uint16_t>(dict.size());
    const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
    out.write(len_bytes, 2);
    out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    if (!out) {
        throw DataError("write failed: " + path.string());
    }
}

template <typename T>
void write(const std::filesystem::path& path, std::initializer_list<std::size_t> shape, std::span<const T> data) {
    std::vector<std::size_t> s(shape);
    write<T>(path, std::span<const std::size_t>(s), data);
}

}  // namespace loce::npy
