#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmems {

#ifdef CMEMS_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

/// Raised when tensor shapes disagree with an operation's contract.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t size() const { return static_cast<std::size_t>(n) * c * h * w; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

/// Dense NCHW tensor. Contiguous, row-major within each plane.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape4 shape, real fill = real(0));
    Tensor(int n, int c, int h, int w, real fill = real(0)) : Tensor(Shape4{n, c, h, w}, fill) {}

    const Shape4& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    std::span<real> span() { return data_; }
    std::span<const real> span() const { return data_; }

    real* plane(int n, int c) { return data_.data() + offset(n, c); }
    const real* plane(int n, int c) const { return data_.data() + offset(n, c); }
    real& at(int n, int c, int y, int x) { return data_[offset(n, c) + static_cast<std::size_t>(y) * shape_.w + x]; }
    real at(int n, int c, int y, int x) const { return data_[offset(n, c) + static_cast<std::size_t>(y) * shape_.w + x]; }
    real& operator[](std::size_t i) { return data_[i]; }
    real operator[](std::size_t i) const { return data_[i]; }

    void fill(real v);
    /// Items [first, first+count) along the batch axis.
    Tensor slice_batch(int first, int count) const;

    bool operator==(const Tensor& other) const = default;

private:
    std::size_t offset(int n, int c) const {
        return (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
    }

    Shape4 shape_{};
    std::vector<real> data_;
};

/// Concatenates along the channel axis: [a, b].
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels for gradients.
void split_channels(const Tensor& ab, int channels_a, Tensor& a, Tensor& b);
/// Stacks along the batch axis; all inputs must share C×H×W.
Tensor concat_batch(std::span<const Tensor> parts);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace cmems
