#include "cmems/tensor.hpp"

#include <algorithm>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cmems {

namespace {

// Activations and im2col buffers are freed and reallocated on every pass. With
// glibc's defaults each of those round trips unmaps and re-faults the pages,
// which costs more than the arithmetic at toy sizes.
[[maybe_unused]] const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    return true;
}();

}  // namespace

std::string Shape4::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

Tensor::Tensor(Shape4 shape, real fill) : shape_(shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw ShapeError("negative tensor extent " + shape.str());
    }
    data_.assign(shape.size(), fill);
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::slice_batch(int first, int count) const {
    if (first < 0 || count < 0 || first + count > shape_.n) {
        throw ShapeError("batch slice out of range for " + shape_.str());
    }
    Tensor out(count, shape_.c, shape_.h, shape_.w);
    const std::size_t item = static_cast<std::size_t>(shape_.c) * shape_.plane();
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * item), count * item, out.data());
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
        throw ShapeError("concat_channels: " + a.shape().str() + " vs " + b.shape().str());
    }
    Tensor out(a.n(), a.c() + b.c(), a.h(), a.w());
    const std::size_t pa = static_cast<std::size_t>(a.c()) * a.shape().plane();
    const std::size_t pb = static_cast<std::size_t>(b.c()) * b.shape().plane();
    for (int n = 0; n < a.n(); ++n) {
        std::copy_n(a.plane(n, 0), pa, out.plane(n, 0));
        std::copy_n(b.plane(n, 0), pb, out.plane(n, a.c()));
    }
    return out;
}

void split_channels(const Tensor& ab, int channels_a, Tensor& a, Tensor& b) {
    const int cb = ab.c() - channels_a;
    a = Tensor(ab.n(), channels_a, ab.h(), ab.w());
    b = Tensor(ab.n(), cb, ab.h(), ab.w());
    const std::size_t pa = static_cast<std::size_t>(channels_a) * ab.shape().plane();
    const std::size_t pb = static_cast<std::size_t>(cb) * ab.shape().plane();
    for (int n = 0; n < ab.n(); ++n) {
        std::copy_n(ab.plane(n, 0), pa, a.plane(n, 0));
        std::copy_n(ab.plane(n, channels_a), pb, b.plane(n, 0));
    }
}

Tensor concat_batch(std::span<const Tensor> parts) {
    if (parts.empty()) return {};
    Shape4 s = parts.front().shape();
    int total = 0;
    for (const auto& p : parts) {
        if (p.c() != s.c || p.h() != s.h || p.w() != s.w) {
            throw ShapeError("concat_batch: " + p.shape().str() + " vs " + s.str());
        }
        total += p.n();
    }
    Tensor out(total, s.c, s.h, s.w);
    real* dst = out.data();
    for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
    }
}

}  // namespace cmems
