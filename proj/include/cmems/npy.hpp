#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmems {

/// File missing, unreadable, or not in a supported array format.
class IngestionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace npy {

/// A decoded array. Values are widened to double regardless of on-disk dtype.
struct Array {
    std::vector<std::size_t> shape;
    std::string dtype;  // numpy descr, e.g. "<f4"
    std::vector<double> values;

    std::size_t count() const;
};

/// Reads NPY v1/v2 files with little-endian dtypes f4, f8, i1/2/4/8, u1/2/4, b1.
Array read(const std::filesystem::path& path);

void write(const std::filesystem::path& path, std::span<const float> values,
           const std::vector<std::size_t>& shape);
void write(const std::filesystem::path& path, std::span<const std::int32_t> values,
           const std::vector<std::size_t>& shape);

}  // namespace npy
}  // namespace cmems
