#include "cmems/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace cmems {
namespace {

// Index permutation for flips then counter-clockwise quarter turns. Maps an
// output coordinate to its source coordinate. Quarter turns require H == W.
struct AxisMap {
    int h, w, turns;
    bool fh, fv;

    std::pair<int, int> source(int y, int x) const {
        for (int t = 0; t < turns; ++t) {
            // Undo one CCW turn: out(y,x) = in(x, W-1-y).
            const int sy = x, sx = w - 1 - y;
            y = sy;
            x = sx;
        }
        if (fv) y = h - 1 - y;
        if (fh) x = w - 1 - x;
        return {y, x};
    }
};

template <class T>
std::vector<T> permute(const std::vector<T>& src, int h, int w, const WeakParams& p) {
    const AxisMap m{h, w, p.quarter_turns, p.flip_h, p.flip_v};
    std::vector<T> out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto [sy, sx] = m.source(y, x);
            out[static_cast<std::size_t>(y) * w + x] = src[static_cast<std::size_t>(sy) * w + sx];
        }
    return out;
}

double reflect(double f, int n) {
    if (n == 1) return 0.0;
    const double period = 2.0 * (n - 1);
    f = std::fmod(std::abs(f), period);
    return f > n - 1 ? period - f : f;
}

// Source coordinate of output (y,x) under a rotation by deg about the centre.
std::pair<double, double> rotate_source(int y, int x, int h, int w, double deg) {
    const double th = deg * std::numbers::pi / 180.0;
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double dy = y - cy, dx = x - cx;
    // Inverse rotation.
    const double sx = std::cos(th) * dx + std::sin(th) * dy + cx;
    const double sy = -std::sin(th) * dx + std::cos(th) * dy + cy;
    return {reflect(sy, h), reflect(sx, w)};
}

}  // namespace

WeakParams sample_weak(Rng& rng, const WeakConfig& cfg, int height, int width) {
    WeakParams p;
    p.flip_h = rng.bernoulli(cfg.flip_prob);
    p.flip_v = rng.bernoulli(cfg.flip_prob);
    p.quarter_turns = cfg.quarter_turns && height == width ? rng.randint(0, 3) : 0;
    p.small_rotation_deg =
        cfg.max_small_rotation_deg > 0 ? rng.uniform(-cfg.max_small_rotation_deg, cfg.max_small_rotation_deg) : 0.0;
    return p;
}

Image apply_weak(const Image& image, const WeakParams& p) {
    const int h = image.height(), w = image.width();
    if (p.quarter_turns % 2 != 0 && h != w) throw ShapeError("quarter turns need a square image");
    if (p.is_identity()) return image;
    std::vector<float> px = permute(image.pixels(), h, w, p);
    if (p.small_rotation_deg != 0.0) {
        std::vector<float> out(px.size());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto [fy, fx] = rotate_source(y, x, h, w, p.small_rotation_deg);
                const int y0 = std::min(static_cast<int>(fy), h - 1), x0 = std::min(static_cast<int>(fx), w - 1);
                const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
                const double ty = fy - y0, tx = fx - x0;
                const double v = (1 - ty) * ((1 - tx) * px[y0 * w + x0] + tx * px[y0 * w + x1]) +
                                 ty * ((1 - tx) * px[y1 * w + x0] + tx * px[y1 * w + x1]);
                out[static_cast<std::size_t>(y) * w + x] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
            }
        px = std::move(out);
    }
    return Image(h, w, std::move(px));
}

LabelMask apply_weak(const LabelMask& mask, const WeakParams& p) {
    const int h = mask.height(), w = mask.width();
    if (p.quarter_turns % 2 != 0 && h != w) throw ShapeError("quarter turns need a square mask");
    if (p.is_identity()) return mask;
    std::vector<std::int32_t> cls = permute(mask.classes(), h, w, p);
    if (p.small_rotation_deg != 0.0) {
        std::vector<std::int32_t> out(cls.size());
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto [fy, fx] = rotate_source(y, x, h, w, p.small_rotation_deg);
                const int sy = std::clamp(static_cast<int>(std::lround(fy)), 0, h - 1);
                const int sx = std::clamp(static_cast<int>(std::lround(fx)), 0, w - 1);
                out[static_cast<std::size_t>(y) * w + x] = cls[static_cast<std::size_t>(sy) * w + sx];
            }
        cls = std::move(out);
    }
    return LabelMask(h, w, mask.num_classes(), std::move(cls));
}

WeakResult weak(const Image& image, const LabelMask* mask, Rng& rng, const WeakConfig& cfg) {
    if (mask && (mask->height() != image.height() || mask->width() != image.width())) {
        throw ShapeError("weak: image and mask differ in shape");
    }
    WeakResult r;
    r.params = sample_weak(rng, cfg, image.height(), image.width());
    r.image = apply_weak(image, r.params);
    if (mask) r.mask = apply_weak(*mask, r.params);
    return r;
}

StrongParams sample_strong(double alpha, Rng& rng) {
    if (alpha < 0) throw std::invalid_argument("strong perturbation needs alpha >= 0");
    StrongParams p;
    if (alpha == 0.0) return p;
    p.brightness = rng.uniform(std::max(0.0, 1.0 - alpha), 1.0 + alpha);
    p.contrast = rng.uniform(std::max(0.0, 1.0 - alpha), 1.0 + alpha);
    p.gamma = rng.uniform(std::max(0.1, 1.0 - alpha), 1.0 + alpha);
    return p;
}

Image apply_strong(const Image& image, const StrongParams& p) {
    std::vector<float> px = image.pixels();
    auto clamp01 = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
    if (p.brightness != 1.0) {
        for (auto& v : px) v = clamp01(v * p.brightness);
    }
    if (p.contrast != 1.0) {
        const double mean = std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(px.size());
        for (auto& v : px) v = clamp01((v - mean) * p.contrast + mean);
    }
    if (p.gamma != 1.0) {
        for (auto& v : px) v = clamp01(std::pow(static_cast<double>(v), p.gamma));
    }
    return Image(image.height(), image.width(), std::move(px));
}

Image strong(const Image& image, double alpha, Rng& rng) { return apply_strong(image, sample_strong(alpha, rng)); }

FeaturePerturbParams sample_feature_perturb(const FeaturePyramid& pyramid, double drop_prob, Rng& rng) {
    if (drop_prob < 0 || drop_prob >= 1) throw std::invalid_argument("feature drop probability must be in [0,1)");
    FeaturePerturbParams p;
    p.drop_prob = drop_prob;
    for (int l = 0; l < kPyramidLevels; ++l) {
        const Tensor& t = pyramid.levels[l];
        p.keep[l].resize(static_cast<std::size_t>(t.n()) * t.c());
        for (auto& k : p.keep[l]) k = rng.bernoulli(drop_prob) ? 0 : 1;
    }
    return p;
}

namespace {

void scale_channels(FeaturePyramid& pyr, const FeaturePerturbParams& p) {
    const real keep_scale = static_cast<real>(1.0 / (1.0 - p.drop_prob));
    for (int l = 0; l < kPyramidLevels; ++l) {
        Tensor& t = pyr.levels[l];
        if (p.keep[l].size() != static_cast<std::size_t>(t.n()) * t.c()) {
            throw ShapeError("feature keep-mask does not match pyramid level " + std::to_string(l));
        }
        const std::size_t plane = t.shape().plane();
        for (int n = 0; n < t.n(); ++n)
            for (int c = 0; c < t.c(); ++c) {
                const real s = p.keep[l][static_cast<std::size_t>(n) * t.c() + c] ? keep_scale : real(0);
                real* q = t.plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) q[i] *= s;
            }
    }
}

}  // namespace

FeaturePyramid apply_feature_perturb(const FeaturePyramid& pyramid, const FeaturePerturbParams& p) {
    FeaturePyramid out = pyramid;
    scale_channels(out, p);
    return out;
}

void feature_perturb_backward(FeaturePyramid& grads, const FeaturePerturbParams& p) { scale_channels(grads, p); }

FeaturePyramid feature_perturb(const FeaturePyramid& pyramid, Rng& rng, double drop_prob) {
    return apply_feature_perturb(pyramid, sample_feature_perturb(pyramid, drop_prob, rng));
}

}  // namespace cmems
