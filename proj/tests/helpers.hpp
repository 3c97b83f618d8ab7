#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>

#include "cmems/rng.hpp"
#include "cmems/tensor.hpp"

namespace testutil {

inline cmems::Tensor random_tensor(cmems::Shape4 s, std::uint64_t seed, double sd = 1.0) {
    cmems::Tensor t(s);
    cmems::Rng rng(seed);
    for (auto& v : t.span()) v = static_cast<cmems::real>(rng.normal(0.0, sd));
    return t;
}

inline std::vector<cmems::real> random_vector(std::size_t n, std::uint64_t seed, double sd = 1.0) {
    std::vector<cmems::real> v(n);
    cmems::Rng rng(seed);
    for (auto& x : v) x = static_cast<cmems::real>(rng.normal(0.0, sd));
    return v;
}

/// max |a-b| / max(1, |b|)
template <class A, class B>
double max_rel_diff(const A& a, const B& b) {
    REQUIRE(a.size() == b.size());
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(double(a[i]) - double(b[i])) / std::max(1.0, std::abs(double(b[i]))));
    return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cmems_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testutil
