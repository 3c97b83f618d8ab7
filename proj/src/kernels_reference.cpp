#include <algorithm>
#include <cmath>

#include "cmems/kernels.hpp"

namespace cmems::kernels::reference {

void conv2d_forward(const Tensor& x, std::span<const real> weight, std::span<const real> bias, int out_channels,
                    int kernel, Tensor& y) {
    const int cin = x.c(), h = x.h(), w = x.w(), pad = kernel / 2;
    y = Tensor(x.n(), out_channels, h, w);
    for (int n = 0; n < x.n(); ++n)
        for (int co = 0; co < out_channels; ++co)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) {
                    double acc = bias[co];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kernel; ++ky)
                            for (int kx = 0; kx < kernel; ++kx) {
                                const int sy = yy + ky - pad, sx = xx + kx - pad;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                                acc += static_cast<double>(
                                           weight[((co * cin + ci) * kernel + ky) * kernel + kx]) *
                                       x.at(n, ci, sy, sx);
                            }
                    y.at(n, co, yy, xx) = static_cast<real>(acc);
                }
}

void conv2d_backward(const Tensor& x, std::span<const real> weight, const Tensor& dy, int kernel, Tensor* dx,
                     std::span<real> dweight, std::span<real> dbias) {
    const int cin = x.c(), cout = dy.c(), h = x.h(), w = x.w(), pad = kernel / 2;
    if (dx) *dx = Tensor(x.shape());
    for (int co = 0; co < cout; ++co) {
        double acc = 0;
        for (int n = 0; n < x.n(); ++n)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) acc += dy.at(n, co, yy, xx);
        dbias[co] += static_cast<real>(acc);
    }
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kernel; ++ky)
                for (int kx = 0; kx < kernel; ++kx) {
                    double acc = 0;
                    for (int n = 0; n < x.n(); ++n)
                        for (int yy = 0; yy < h; ++yy)
                            for (int xx = 0; xx < w; ++xx) {
                                const int sy = yy + ky - pad, sx = xx + kx - pad;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                                acc += static_cast<double>(dy.at(n, co, yy, xx)) * x.at(n, ci, sy, sx);
                            }
                    dweight[((co * cin + ci) * kernel + ky) * kernel + kx] += static_cast<real>(acc);
                }
    if (!dx) return;
    for (int n = 0; n < x.n(); ++n)
        for (int ci = 0; ci < cin; ++ci)
            for (int sy = 0; sy < h; ++sy)
                for (int sx = 0; sx < w; ++sx) {
                    double acc = 0;
                    for (int co = 0; co < cout; ++co)
                        for (int ky = 0; ky < kernel; ++ky)
                            for (int kx = 0; kx < kernel; ++kx) {
                                const int yy = sy - ky + pad, xx = sx - kx + pad;
                                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                                acc += static_cast<double>(
                                           weight[((co * cin + ci) * kernel + ky) * kernel + kx]) *
                                       dy.at(n, co, yy, xx);
                            }
                    dx->at(n, ci, sy, sx) = static_cast<real>(acc);
                }
}

void batchnorm_forward_train(const Tensor& x, std::span<const real> gamma, std::span<const real> beta, real eps,
                             Tensor& y, std::vector<real>& mean, std::vector<real>& var, std::vector<real>& invstd) {
    const int c = x.c();
    const double m = static_cast<double>(x.n()) * x.h() * x.w();
    y = Tensor(x.shape());
    mean.assign(c, 0);
    var.assign(c, 0);
    invstd.assign(c, 0);
    for (int ch = 0; ch < c; ++ch) {
        double s = 0;
        for (int n = 0; n < x.n(); ++n)
            for (int i = 0; i < x.h() * x.w(); ++i) s += x.plane(n, ch)[i];
        const double mu = s / m;
        double v = 0;
        for (int n = 0; n < x.n(); ++n)
            for (int i = 0; i < x.h() * x.w(); ++i) {
                const double d = x.plane(n, ch)[i] - mu;
                v += d * d;
            }
        v /= m;
        const double is = 1.0 / std::sqrt(v + eps);
        mean[ch] = static_cast<real>(mu);
        var[ch] = static_cast<real>(v);
        invstd[ch] = static_cast<real>(is);
        for (int n = 0; n < x.n(); ++n)
            for (int i = 0; i < x.h() * x.w(); ++i)
                y.plane(n, ch)[i] = static_cast<real>(gamma[ch] * (x.plane(n, ch)[i] - mu) * is + beta[ch]);
    }
}

void batchnorm_backward(const Tensor& x, const Tensor& dy, std::span<const real> gamma, std::span<const real> mean,
                        std::span<const real> invstd, Tensor& dx, std::span<real> dgamma, std::span<real> dbeta) {
    const int c = x.c(), hw = x.h() * x.w();
    const double m = static_cast<double>(x.n()) * hw;
    dx = Tensor(x.shape());
    for (int ch = 0; ch < c; ++ch) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < x.n(); ++n)
            for (int i = 0; i < hw; ++i) {
                const double xhat = (x.plane(n, ch)[i] - mean[ch]) * static_cast<double>(invstd[ch]);
                sum_dy += dy.plane(n, ch)[i];
                sum_dy_xhat += dy.plane(n, ch)[i] * xhat;
            }
        dgamma[ch] += static_cast<real>(sum_dy_xhat);
        dbeta[ch] += static_cast<real>(sum_dy);
        for (int n = 0; n < x.n(); ++n)
            for (int i = 0; i < hw; ++i) {
                const double xhat = (x.plane(n, ch)[i] - mean[ch]) * static_cast<double>(invstd[ch]);
                dx.plane(n, ch)[i] = static_cast<real>(gamma[ch] * invstd[ch] / m *
                                                       (m * dy.plane(n, ch)[i] - sum_dy - xhat * sum_dy_xhat));
            }
    }
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax) {
    const int oh = x.h() / 2, ow = x.w() / 2;
    y = Tensor(x.n(), x.c(), oh, ow);
    argmax.assign(y.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx, ++o) {
                    int best_idx = (2 * yy) * x.w() + 2 * xx;
                    real best = x.plane(n, c)[best_idx];
                    for (int d = 1; d < 4; ++d) {
                        const int idx = (2 * yy + d / 2) * x.w() + 2 * xx + d % 2;
                        if (x.plane(n, c)[idx] > best) {
                            best = x.plane(n, c)[idx];
                            best_idx = idx;
                        }
                    }
                    y.at(n, c, yy, xx) = best;
                    argmax[o] = best_idx;
                }
}

void maxpool2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax, Shape4 x_shape, Tensor& dx) {
    dx = Tensor(x_shape);
    std::size_t o = 0;
    for (int n = 0; n < dy.n(); ++n)
        for (int c = 0; c < dy.c(); ++c)
            for (int i = 0; i < dy.h() * dy.w(); ++i, ++o) dx.plane(n, c)[argmax[o]] += dy.plane(n, c)[i];
}

namespace {

// Source taps for output coordinate o of a 2× half-pixel upsample over length len.
void taps(int o, int len, int& i0, int& i1, double& t) {
    const double f = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
    i0 = std::min(static_cast<int>(f), len - 1);
    i1 = std::min(i0 + 1, len - 1);
    t = f - i0;
}

}  // namespace

void upsample2_forward(const Tensor& x, Tensor& y) {
    y = Tensor(x.n(), x.c(), x.h() * 2, x.w() * 2);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int yy = 0; yy < y.h(); ++yy)
                for (int xx = 0; xx < y.w(); ++xx) {
                    int y0, y1, x0, x1;
                    double ty, tx;
                    taps(yy, x.h(), y0, y1, ty);
                    taps(xx, x.w(), x0, x1, tx);
                    const double v = (1 - ty) * ((1 - tx) * x.at(n, c, y0, x0) + tx * x.at(n, c, y0, x1)) +
                                     ty * ((1 - tx) * x.at(n, c, y1, x0) + tx * x.at(n, c, y1, x1));
                    y.at(n, c, yy, xx) = static_cast<real>(v);
                }
}

void upsample2_backward(const Tensor& dy, Shape4 x_shape, Tensor& dx) {
    dx = Tensor(x_shape);
    for (int n = 0; n < dy.n(); ++n)
        for (int c = 0; c < dy.c(); ++c)
            for (int yy = 0; yy < dy.h(); ++yy)
                for (int xx = 0; xx < dy.w(); ++xx) {
                    int y0, y1, x0, x1;
                    double ty, tx;
                    taps(yy, x_shape.h, y0, y1, ty);
                    taps(xx, x_shape.w, x0, x1, tx);
                    const double g = dy.at(n, c, yy, xx);
                    dx.at(n, c, y0, x0) += static_cast<real>(g * (1 - ty) * (1 - tx));
                    dx.at(n, c, y0, x1) += static_cast<real>(g * (1 - ty) * tx);
                    dx.at(n, c, y1, x0) += static_cast<real>(g * ty * (1 - tx));
                    dx.at(n, c, y1, x1) += static_cast<real>(g * ty * tx);
                }
}

void softmax_channels(const Tensor& logits, Tensor& probs) {
    probs = Tensor(logits.shape());
    for (int n = 0; n < logits.n(); ++n)
        for (int yy = 0; yy < logits.h(); ++yy)
            for (int xx = 0; xx < logits.w(); ++xx) {
                double mx = logits.at(n, 0, yy, xx);
                for (int c = 1; c < logits.c(); ++c) mx = std::max<double>(mx, logits.at(n, c, yy, xx));
                double s = 0;
                for (int c = 0; c < logits.c(); ++c) s += std::exp(logits.at(n, c, yy, xx) - mx);
                for (int c = 0; c < logits.c(); ++c)
                    probs.at(n, c, yy, xx) = static_cast<real>(std::exp(logits.at(n, c, yy, xx) - mx) / s);
            }
}

}  // namespace cmems::kernels::reference
