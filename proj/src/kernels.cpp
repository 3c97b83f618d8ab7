#include "cmems/kernels.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace cmems::kernels {
namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Upper bound on the im2col buffer, in elements. Larger batches are processed
// in image chunks; accumulation order across chunks is fixed.
constexpr std::size_t kMaxColumnElems = std::size_t{1} << 24;

int images_per_chunk(std::size_t rows, std::size_t plane, int n) {
    const std::size_t per_image = std::max<std::size_t>(1, rows * plane);
    return static_cast<int>(std::clamp<std::size_t>(kMaxColumnElems / per_image, 1, static_cast<std::size_t>(n)));
}

// col[(ci*k + ky)*k + kx][j*HW + y*W + x] = x[n0+j][ci][y+ky-pad][x+kx-pad] (zero outside).
void im2col(const Tensor& x, int n0, int count, int k, std::vector<real>& col) {
    const int cin = x.c(), h = x.h(), w = x.w(), pad = k / 2;
    const std::size_t hw = x.shape().plane();
    const std::size_t cols = hw * count;
    const int rows = cin * k * k;
    col.resize(static_cast<std::size_t>(rows) * cols);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const int ci = r / (k * k), ky = (r / k) % k, kx = r % k;
        real* dst_row = col.data() + static_cast<std::size_t>(r) * cols;
        for (int j = 0; j < count; ++j) {
            const real* src = x.plane(n0 + j, ci);
            real* dst = dst_row + j * hw;
            for (int yy = 0; yy < h; ++yy) {
                const int sy = yy + ky - pad;
                real* d = dst + static_cast<std::size_t>(yy) * w;
                if (sy < 0 || sy >= h) {
                    std::fill(d, d + w, real(0));
                    continue;
                }
                const int x_lo = std::max(0, pad - kx);
                const int x_hi = std::min(w, w + pad - kx);
                std::fill(d, d + x_lo, real(0));
                std::copy(src + static_cast<std::size_t>(sy) * w + x_lo + kx - pad,
                          src + static_cast<std::size_t>(sy) * w + x_hi + kx - pad, d + x_lo);
                std::fill(d + x_hi, d + w, real(0));
            }
        }
    }
}

}  // namespace

void conv2d_forward(const Tensor& x, std::span<const real> weight, std::span<const real> bias, int out_channels,
                    int kernel, Tensor& y) {
    if (kernel < 1 || kernel % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
    const int cin = x.c();
    const int rows = cin * kernel * kernel;
    if (weight.size() != static_cast<std::size_t>(out_channels) * rows || bias.size() != std::size_t(out_channels)) {
        throw ShapeError("conv2d_forward: weight/bias size does not match " + x.shape().str());
    }
    y = Tensor(x.n(), out_channels, x.h(), x.w());
    const std::size_t hw = x.shape().plane();
    const int chunk = images_per_chunk(rows, hw, std::max(1, x.n()));
    const ConstMapMat wmat(weight.data(), out_channels, rows);
    std::vector<real> col;
    RowMat out;
    for (int n0 = 0; n0 < x.n(); n0 += chunk) {
        const int count = std::min(chunk, x.n() - n0);
        const std::size_t cols = hw * count;
        im2col(x, n0, count, kernel, col);
        out.noalias() = wmat * ConstMapMat(col.data(), rows, static_cast<Eigen::Index>(cols));
#pragma omp parallel for collapse(2) schedule(static)
        for (int j = 0; j < count; ++j) {
            for (int co = 0; co < out_channels; ++co) {
                const real* src = out.data() + static_cast<std::size_t>(co) * cols + j * hw;
                real* dst = y.plane(n0 + j, co);
                const real b = bias[co];
                for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + b;
            }
        }
    }
}

void conv2d_backward(const Tensor& x, std::span<const real> weight, const Tensor& dy, int kernel, Tensor* dx,
                     std::span<real> dweight, std::span<real> dbias) {
    const int cin = x.c(), cout = dy.c();
    const int rows = cin * kernel * kernel;
    if (dy.n() != x.n() || dy.h() != x.h() || dy.w() != x.w()) {
        throw ShapeError("conv2d_backward: " + x.shape().str() + " vs " + dy.shape().str());
    }
    const std::size_t hw = x.shape().plane();
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        double acc = 0;
        for (int n = 0; n < dy.n(); ++n) {
            const real* p = dy.plane(n, co);
            for (std::size_t i = 0; i < hw; ++i) acc += p[i];
        }
        dbias[co] += static_cast<real>(acc);
    }

    const int chunk = images_per_chunk(rows, hw, std::max(1, x.n()));
    MapMat dwmat(dweight.data(), cout, rows);
    std::vector<real> col;
    RowMat dymat;
    for (int n0 = 0; n0 < x.n(); n0 += chunk) {
        const int count = std::min(chunk, x.n() - n0);
        const auto cols = static_cast<Eigen::Index>(hw * count);
        dymat.resize(cout, cols);
#pragma omp parallel for collapse(2) schedule(static)
        for (int co = 0; co < cout; ++co) {
            for (int j = 0; j < count; ++j) {
                std::copy_n(dy.plane(n0 + j, co), hw, dymat.data() + static_cast<std::size_t>(co) * cols + j * hw);
            }
        }
        im2col(x, n0, count, kernel, col);
        const ConstMapMat colmat(col.data(), rows, cols);
        dwmat.noalias() += dymat * colmat.transpose();
    }
    if (dx) {
        // Stride 1 with symmetric padding: dx is the correlation of dy with the
        // spatially flipped kernel, input and output channels swapped.
        const int kk = kernel * kernel;
        std::vector<real> flipped(weight.size());
        for (int co = 0; co < cout; ++co)
            for (int ci = 0; ci < cin; ++ci)
                for (int t = 0; t < kk; ++t)
                    flipped[(static_cast<std::size_t>(ci) * cout + co) * kk + (kk - 1 - t)] =
                        weight[(static_cast<std::size_t>(co) * cin + ci) * kk + t];
        const std::vector<real> zero(cin, real(0));
        conv2d_forward(dy, flipped, zero, cin, kernel, *dx);
    }
}

void batchnorm_forward_train(const Tensor& x, std::span<const real> gamma, std::span<const real> beta, real eps,
                             Tensor& y, std::vector<real>& mean, std::vector<real>& var, std::vector<real>& invstd) {
    const int c = x.c();
    const std::size_t hw = x.shape().plane();
    const double m = static_cast<double>(x.n()) * hw;
    y = Tensor(x.shape());
    mean.assign(c, 0);
    var.assign(c, 0);
    invstd.assign(c, 0);
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int n = 0; n < x.n(); ++n) {
            const real* p = x.plane(n, ch);
            for (std::size_t i = 0; i < hw; ++i) s += p[i];
        }
        const double mu = s / m;
        double v = 0;
        for (int n = 0; n < x.n(); ++n) {
            const real* p = x.plane(n, ch);
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = p[i] - mu;
                v += d * d;
            }
        }
        v /= m;
        const double is = 1.0 / std::sqrt(v + eps);
        mean[ch] = static_cast<real>(mu);
        var[ch] = static_cast<real>(v);
        invstd[ch] = static_cast<real>(is);
        const real scale = static_cast<real>(gamma[ch] * is);
        const real shift = static_cast<real>(beta[ch] - gamma[ch] * mu * is);
        for (int n = 0; n < x.n(); ++n) {
            const real* p = x.plane(n, ch);
            real* q = y.plane(n, ch);
            for (std::size_t i = 0; i < hw; ++i) q[i] = p[i] * scale + shift;
        }
    }
}

void batchnorm_forward_eval(const Tensor& x, std::span<const real> gamma, std::span<const real> beta,
                            std::span<const real> running_mean, std::span<const real> running_var, real eps,
                            Tensor& y) {
    const std::size_t hw = x.shape().plane();
    y = Tensor(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < x.n(); ++n) {
        for (int ch = 0; ch < x.c(); ++ch) {
            const double is = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps);
            const real scale = static_cast<real>(gamma[ch] * is);
            const real shift = static_cast<real>(beta[ch] - gamma[ch] * running_mean[ch] * is);
            const real* p = x.plane(n, ch);
            real* q = y.plane(n, ch);
            for (std::size_t i = 0; i < hw; ++i) q[i] = p[i] * scale + shift;
        }
    }
}

void batchnorm_backward(const Tensor& x, const Tensor& dy, std::span<const real> gamma, std::span<const real> mean,
                        std::span<const real> invstd, Tensor& dx, std::span<real> dgamma, std::span<real> dbeta) {
    const std::size_t hw = x.shape().plane();
    const double m = static_cast<double>(x.n()) * hw;
    dx = Tensor(x.shape());
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < x.c(); ++ch) {
        const double mu = mean[ch], is = invstd[ch];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < x.n(); ++n) {
            const real* p = x.plane(n, ch);
            const real* g = dy.plane(n, ch);
            for (std::size_t i = 0; i < hw; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += g[i] * ((p[i] - mu) * is);
            }
        }
        dgamma[ch] += static_cast<real>(sum_dy_xhat);
        dbeta[ch] += static_cast<real>(sum_dy);
        const double k = gamma[ch] * is / m;
        for (int n = 0; n < x.n(); ++n) {
            const real* p = x.plane(n, ch);
            const real* g = dy.plane(n, ch);
            real* d = dx.plane(n, ch);
            for (std::size_t i = 0; i < hw; ++i) {
                d[i] = static_cast<real>(k * (m * g[i] - sum_dy - (p[i] - mu) * is * sum_dy_xhat));
            }
        }
    }
}

void leaky_relu_forward(const Tensor& x, real slope, Tensor& y) {
    if (&y != &x) y = Tensor(x.shape());
    const std::size_t n = x.size();
    const real* p = x.data();
    real* q = y.data();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) q[i] = p[i] > 0 ? p[i] : p[i] * slope;
}

void leaky_relu_backward(const Tensor& x, const Tensor& dy, real slope, Tensor& dx) {
    if (&dx != &dy) dx = Tensor(x.shape());
    const std::size_t n = x.size();
    const real* p = x.data();
    const real* g = dy.data();
    real* d = dx.data();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) d[i] = p[i] > 0 ? g[i] : g[i] * slope;
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax) {
    const int oh = x.h() / 2, ow = x.w() / 2, w = x.w();
    y = Tensor(x.n(), x.c(), oh, ow);
    argmax.assign(y.size(), 0);
    const std::size_t oplane = y.shape().plane();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const real* p = x.plane(n, c);
            real* q = y.plane(n, c);
            std::int32_t* a = argmax.data() + (static_cast<std::size_t>(n) * x.c() + c) * oplane;
            for (int yy = 0; yy < oh; ++yy) {
                for (int xx = 0; xx < ow; ++xx) {
                    const int i0 = 2 * yy * w + 2 * xx;
                    int best = i0;
                    if (p[i0 + 1] > p[best]) best = i0 + 1;
                    if (p[i0 + w] > p[best]) best = i0 + w;
                    if (p[i0 + w + 1] > p[best]) best = i0 + w + 1;
                    q[yy * ow + xx] = p[best];
                    a[yy * ow + xx] = best;
                }
            }
        }
    }
}

void maxpool2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax, Shape4 x_shape, Tensor& dx) {
    dx = Tensor(x_shape);
    const std::size_t oplane = dy.shape().plane();
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < dy.n(); ++n) {
        for (int c = 0; c < dy.c(); ++c) {
            const real* g = dy.plane(n, c);
            real* d = dx.plane(n, c);
            const std::int32_t* a = argmax.data() + (static_cast<std::size_t>(n) * dy.c() + c) * oplane;
            for (std::size_t i = 0; i < oplane; ++i) d[a[i]] += g[i];
        }
    }
}

namespace {

// For 2× half-pixel upsampling, output index 2i+1 reads (i, i+1) with weights
// (0.75, 0.25) and output 2i reads (i-1, i) with (0.25, 0.75); edges clamp.
struct Tap {
    int i0, i1;
    real w0, w1;
};

std::vector<Tap> make_taps(int in_len) {
    std::vector<Tap> t(static_cast<std::size_t>(in_len) * 2);
    for (int o = 0; o < 2 * in_len; ++o) {
        const double f = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
        const int i0 = std::min(static_cast<int>(f), in_len - 1);
        const int i1 = std::min(i0 + 1, in_len - 1);
        const double frac = f - i0;
        t[o] = {i0, i1, static_cast<real>(1 - frac), static_cast<real>(frac)};
    }
    return t;
}

}  // namespace

void upsample2_forward(const Tensor& x, Tensor& y) {
    const int h = x.h(), w = x.w(), oh = 2 * h, ow = 2 * w;
    y = Tensor(x.n(), x.c(), oh, ow);
    const auto ty = make_taps(h);
    const auto tx = make_taps(w);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            const real* p = x.plane(n, c);
            real* q = y.plane(n, c);
            for (int yy = 0; yy < oh; ++yy) {
                const Tap& a = ty[yy];
                const real* r0 = p + static_cast<std::size_t>(a.i0) * w;
                const real* r1 = p + static_cast<std::size_t>(a.i1) * w;
                for (int xx = 0; xx < ow; ++xx) {
                    const Tap& b = tx[xx];
                    q[yy * ow + xx] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                                      a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
                }
            }
        }
    }
}

void upsample2_backward(const Tensor& dy, Shape4 x_shape, Tensor& dx) {
    const int w = x_shape.w, oh = dy.h(), ow = dy.w();
    dx = Tensor(x_shape);
    const auto ty = make_taps(x_shape.h);
    const auto tx = make_taps(x_shape.w);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < dy.n(); ++n) {
        for (int c = 0; c < dy.c(); ++c) {
            const real* g = dy.plane(n, c);
            real* d = dx.plane(n, c);
            for (int yy = 0; yy < oh; ++yy) {
                const Tap& a = ty[yy];
                real* r0 = d + static_cast<std::size_t>(a.i0) * w;
                real* r1 = d + static_cast<std::size_t>(a.i1) * w;
                for (int xx = 0; xx < ow; ++xx) {
                    const Tap& b = tx[xx];
                    const real v = g[yy * ow + xx];
                    r0[b.i0] += a.w0 * b.w0 * v;
                    r0[b.i1] += a.w0 * b.w1 * v;
                    r1[b.i0] += a.w1 * b.w0 * v;
                    r1[b.i1] += a.w1 * b.w1 * v;
                }
            }
        }
    }
}

void softmax_channels(const Tensor& logits, Tensor& probs) {
    probs = Tensor(logits.shape());
    const int k = logits.c();
    const std::size_t hw = logits.shape().plane();
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (!std::isfinite(logits[i])) throw std::domain_error("softmax_channels: non-finite logit");
    }
#pragma omp parallel for schedule(static)
    for (int n = 0; n < logits.n(); ++n) {
        std::vector<double> e(k);
        for (std::size_t i = 0; i < hw; ++i) {
            double mx = logits.plane(n, 0)[i];
            for (int c = 1; c < k; ++c) mx = std::max<double>(mx, logits.plane(n, c)[i]);
            double s = 0;
            for (int c = 0; c < k; ++c) {
                e[c] = std::exp(logits.plane(n, c)[i] - mx);
                s += e[c];
            }
            for (int c = 0; c < k; ++c) probs.plane(n, c)[i] = static_cast<real>(e[c] / s);
        }
    }
}

}  // namespace cmems::kernels
