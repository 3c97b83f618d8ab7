#include "cmems/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

namespace cmems::npy {
namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::string extract_field(const std::string& header, const std::string& key, const std::filesystem::path& path) {
    const auto k = header.find("'" + key + "'");
    if (k == std::string::npos) throw IngestionError(path.string() + ": NPY header lacks '" + key + "'");
    const auto colon = header.find(':', k);
    if (colon == std::string::npos) throw IngestionError(path.string() + ": malformed NPY header");
    return header.substr(colon + 1);
}

std::vector<std::size_t> parse_shape(const std::string& rest, const std::filesystem::path& path) {
    const auto open = rest.find('(');
    const auto close = rest.find(')', open);
    if (open == std::string::npos || close == std::string::npos) {
        throw IngestionError(path.string() + ": malformed NPY shape");
    }
    std::vector<std::size_t> shape;
    std::stringstream ss(rest.substr(open + 1, close - open - 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto first = tok.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        shape.push_back(static_cast<std::size_t>(std::stoull(tok.substr(first))));
    }
    return shape;
}

template <class T>
void widen(const std::vector<char>& raw, std::vector<double>& out) {
    const std::size_t n = raw.size() / sizeof(T);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        T v;
        std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
        out[i] = static_cast<double>(v);
    }
}

std::string shape_literal(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += std::to_string(shape[i]);
        if (shape.size() == 1 || i + 1 < shape.size()) s += ",";
        if (i + 1 < shape.size()) s += " ";
    }
    return s + ")";
}

void write_raw(const std::filesystem::path& path, const std::string& descr, const void* data, std::size_t bytes,
               const std::vector<std::size_t>& shape) {
    std::string header = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " + shape_literal(shape) + ", }";
    // Pad so that magic(6) + version(2) + len(2) + header + '\n' is a multiple of 64.
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IngestionError("cannot write " + path.string());
    f.write(kMagic, 6);
    const char version[2] = {1, 0};
    f.write(version, 2);
    const auto len = static_cast<std::uint16_t>(header.size());
    f.write(reinterpret_cast<const char*>(&len), 2);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw IngestionError("short write to " + path.string());
}

}  // namespace

std::size_t Array::count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Array read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestionError("missing or unreadable file: " + path.string());

    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, kMagic, 6) != 0) throw IngestionError(path.string() + ": not an NPY file");
    char version[2];
    f.read(version, 2);
    std::uint32_t header_len = 0;
    if (version[0] == 1) {
        std::uint16_t l16 = 0;
        f.read(reinterpret_cast<char*>(&l16), 2);
        header_len = l16;
    } else if (version[0] == 2 || version[0] == 3) {
        f.read(reinterpret_cast<char*>(&header_len), 4);
    } else {
        throw IngestionError(path.string() + ": unsupported NPY version");
    }
    std::string header(header_len, '\0');
    f.read(header.data(), header_len);
    if (!f) throw IngestionError(path.string() + ": truncated NPY header");

    Array arr;
    {
        const std::string rest = extract_field(header, "descr", path);
        const auto q1 = rest.find('\'');
        const auto q2 = rest.find('\'', q1 + 1);
        if (q1 == std::string::npos || q2 == std::string::npos) {
            throw IngestionError(path.string() + ": malformed NPY descr");
        }
        arr.dtype = rest.substr(q1 + 1, q2 - q1 - 1);
    }
    if (extract_field(header, "fortran_order", path).find("True") < 8) {
        throw IngestionError(path.string() + ": fortran-ordered arrays are not supported");
    }
    arr.shape = parse_shape(extract_field(header, "shape", path), path);

    const std::string& d = arr.dtype;
    if (d.size() < 3 || d[0] == '>') throw IngestionError(path.string() + ": unsupported dtype " + d);
    const std::string code = d.substr(1);
    std::size_t item = 0;
    if (code == "f4" || code == "i4" || code == "u4") item = 4;
    else if (code == "f8" || code == "i8") item = 8;
    else if (code == "i2" || code == "u2") item = 2;
    else if (code == "i1" || code == "u1" || code == "b1") item = 1;
    else throw IngestionError(path.string() + ": unsupported dtype " + d);

    std::vector<char> raw(arr.count() * item);
    f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!f) throw IngestionError(path.string() + ": truncated NPY payload");

    if (code == "f4") widen<float>(raw, arr.values);
    else if (code == "f8") widen<double>(raw, arr.values);
    else if (code == "i4") widen<std::int32_t>(raw, arr.values);
    else if (code == "u4") widen<std::uint32_t>(raw, arr.values);
    else if (code == "i8") widen<std::int64_t>(raw, arr.values);
    else if (code == "i2") widen<std::int16_t>(raw, arr.values);
    else if (code == "u2") widen<std::uint16_t>(raw, arr.values);
    else if (code == "i1") widen<std::int8_t>(raw, arr.values);
    else widen<std::uint8_t>(raw, arr.values);
    return arr;
}

void write(const std::filesystem::path& path, std::span<const float> values, const std::vector<std::size_t>& shape) {
    write_raw(path, "<f4", values.data(), values.size_bytes(), shape);
}

void write(const std::filesystem::path& path, std::span<const std::int32_t> values,
           const std::vector<std::size_t>& shape) {
    write_raw(path, "<i4", values.data(), values.size_bytes(), shape);
}

}  // namespace cmems::npy
