#include "cmems/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>

namespace cmems {

void to_json(nlohmann::json& j, const SynthesisConfig& c) {
    j = nlohmann::json{{"per_background", c.per_background},
                       {"max_rotation_deg", c.max_rotation_deg},
                       {"scale_min", c.scale_min},
                       {"scale_max", c.scale_max},
                       {"flip_prob", c.flip_prob},
                       {"brightness", c.brightness},
                       {"contrast", c.contrast},
                       {"noise_sigma", c.noise_sigma},
                       {"transform_background", c.transform_background},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthesisConfig& c) {
    SynthesisConfig d;
    c.per_background = j.value("per_background", d.per_background);
    c.max_rotation_deg = j.value("max_rotation_deg", d.max_rotation_deg);
    c.scale_min = j.value("scale_min", d.scale_min);
    c.scale_max = j.value("scale_max", d.scale_max);
    c.flip_prob = j.value("flip_prob", d.flip_prob);
    c.brightness = j.value("brightness", d.brightness);
    c.contrast = j.value("contrast", d.contrast);
    c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    c.transform_background = j.value("transform_background", d.transform_background);
    c.seed = j.value("seed", d.seed);
}

std::vector<Instance> extract_instances(const ExemplarDataset& exemplar) {
    const LabelMask& m = exemplar.mask;
    const int h = m.height(), w = m.width();
    std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
    std::vector<Instance> out;
    for (int k = 1; k < m.num_classes(); ++k) {
        for (int start = 0; start < h * w; ++start) {
            if (m.classes()[start] != k || label[start] >= 0) continue;
            // Flood fill, collecting pixels.
            const int id = static_cast<int>(out.size());
            std::vector<int> pixels{start};
            label[start] = id;
            for (std::size_t i = 0; i < pixels.size(); ++i) {
                const int y = pixels[i] / w, x = pixels[i] % w;
                const int ny[4] = {y - 1, y + 1, y, y};
                const int nx[4] = {x, x, x - 1, x + 1};
                for (int d = 0; d < 4; ++d) {
                    if (ny[d] < 0 || ny[d] >= h || nx[d] < 0 || nx[d] >= w) continue;
                    const int j = ny[d] * w + nx[d];
                    if (label[j] < 0 && m.classes()[j] == k) {
                        label[j] = id;
                        pixels.push_back(j);
                    }
                }
            }
            Instance inst;
            inst.class_id = k;
            int y0 = h, x0 = w, y1 = -1, x1 = -1;
            for (int p : pixels) {
                y0 = std::min(y0, p / w);
                y1 = std::max(y1, p / w);
                x0 = std::min(x0, p % w);
                x1 = std::max(x1, p % w);
            }
            inst.y0 = y0;
            inst.x0 = x0;
            inst.h = y1 - y0 + 1;
            inst.w = x1 - x0 + 1;
            inst.mask.assign(static_cast<std::size_t>(inst.h) * inst.w, 0);
            for (int p : pixels) inst.mask[(p / w - y0) * inst.w + (p % w - x0)] = 1;
            inst.pixel_count = pixels.size();
            out.push_back(std::move(inst));
        }
    }
    if (out.empty()) throw ValidationError("exemplar has no foreground pixels");
    return out;
}

InstanceTransform::InstanceTransform(const Instance& inst, const GeometricParams& g) {
    if (!(g.scale > 0)) throw std::invalid_argument("geometric scale must be positive");
    cy_ = inst.y0 + (inst.h - 1) / 2.0;
    cx_ = inst.x0 + (inst.w - 1) / 2.0;
    ty_ = g.dy;
    tx_ = g.dx;
    const double th = g.rotation_deg * std::numbers::pi / 180.0;
    const double cs = g.rotation_deg == 0.0 ? 1.0 : std::cos(th);
    const double sn = g.rotation_deg == 0.0 ? 0.0 : std::sin(th);
    const double fx = g.flip_h ? -1.0 : 1.0;
    const double fy = g.flip_v ? -1.0 : 1.0;
    // Inverse of (scale · rotation · flip) acting on (x, y).
    a_ = fx * cs / g.scale;   // src_x from dx
    b_ = fx * sn / g.scale;   // src_x from dy
    c_ = -fy * sn / g.scale;  // src_y from dx
    d_ = fy * cs / g.scale;   // src_y from dy

    // Forward corners: forward linear part is the inverse of [[a b][c d]].
    const double det = a_ * d_ - b_ * c_;
    const double fa = d_ / det, fb = -b_ / det, fc = -c_ / det, fd = a_ / det;
    double ymin = 1e300, ymax = -1e300, xmin = 1e300, xmax = -1e300;
    for (double py : {inst.y0 - 0.5, inst.y0 + inst.h - 0.5}) {
        for (double px : {inst.x0 - 0.5, inst.x0 + inst.w - 0.5}) {
            const double dx = px - cx_, dy = py - cy_;
            const double ox = cx_ + tx_ + fa * dx + fb * dy;
            const double oy = cy_ + ty_ + fc * dx + fd * dy;
            ymin = std::min(ymin, oy);
            ymax = std::max(ymax, oy);
            xmin = std::min(xmin, ox);
            xmax = std::max(xmax, ox);
        }
    }
    bounds_ = {ymin, xmin, ymax, xmax};
}

std::pair<double, double> InstanceTransform::source(double y, double x) const {
    const double dx = x - cx_ - tx_, dy = y - cy_ - ty_;
    return {cy_ + c_ * dx + d_ * dy, cx_ + a_ * dx + b_ * dy};
}

std::array<double, 4> InstanceTransform::bounds() const { return bounds_; }

Image apply_intensity(const Image& image, const IntensityParams& p, Rng& rng) {
    std::vector<float> px = image.pixels();
    const double mean = std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(px.size());
    for (auto& v : px) {
        double x = (v - mean) * p.contrast_factor + mean + p.brightness_delta;
        if (p.noise_sigma > 0) x += rng.normal(0.0, p.noise_sigma);
        v = static_cast<float>(std::clamp(x, 0.0, 1.0));
    }
    return Image(image.height(), image.width(), std::move(px));
}

namespace {

double reflect(double f, int n) {
    if (n == 1) return 0.0;
    const double period = 2.0 * (n - 1);
    f = std::fmod(std::abs(f), period);
    return f > n - 1 ? period - f : f;
}

float bilinear(const Image& img, double y, double x) {
    const int h = img.height(), w = img.width();
    y = std::clamp(y, 0.0, h - 1.0);
    x = std::clamp(x, 0.0, w - 1.0);
    const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double ty = y - y0, tx = x - x0;
    const double v = (1 - ty) * ((1 - tx) * img.at(y0, x0) + tx * img.at(y0, x1)) +
                     ty * ((1 - tx) * img.at(y1, x0) + tx * img.at(y1, x1));
    return static_cast<float>(v);
}

bool in_support(const Instance& inst, const InstanceTransform& t, int y, int x) {
    const auto [sy, sx] = t.source(y, x);
    const long iy = std::lround(sy) - inst.y0;
    const long ix = std::lround(sx) - inst.x0;
    if (iy < 0 || iy >= inst.h || ix < 0 || ix >= inst.w) return false;
    return inst.mask[static_cast<std::size_t>(iy) * inst.w + ix] != 0;
}

std::vector<std::uint8_t> support_of(const Instance& inst, const InstanceTransform& t, int h, int w,
                                     std::size_t& count) {
    std::vector<std::uint8_t> s(static_cast<std::size_t>(h) * w, 0);
    count = 0;
    const auto b = t.bounds();
    const int y_lo = std::max(0, static_cast<int>(std::floor(b[0])));
    const int x_lo = std::max(0, static_cast<int>(std::floor(b[1])));
    const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(b[2])));
    const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(b[3])));
    for (int y = y_lo; y <= y_hi; ++y)
        for (int x = x_lo; x <= x_hi; ++x)
            if (in_support(inst, t, y, x)) {
                s[static_cast<std::size_t>(y) * w + x] = 1;
                ++count;
            }
    return s;
}

// Translation range keeping the (zero-translation) bounds inside the canvas.
bool translation_range(const Instance& inst, GeometricParams g, int h, int w, int& dy_lo, int& dy_hi, int& dx_lo,
                       int& dx_hi) {
    g.dx = 0;
    g.dy = 0;
    const auto b = InstanceTransform(inst, g).bounds();
    dy_lo = static_cast<int>(std::ceil(-b[0]));
    dy_hi = static_cast<int>(std::floor(h - 1 - b[2]));
    dx_lo = static_cast<int>(std::ceil(-b[1]));
    dx_hi = static_cast<int>(std::floor(w - 1 - b[3]));
    return dy_lo <= dy_hi && dx_lo <= dx_hi;
}

constexpr int kMaxPlacementRetries = 10;

}  // namespace

Image apply_global_geometry(const Image& image, const GeometricParams& g) {
    if (g.rotation_deg == 0.0 && !g.flip_h && !g.flip_v && g.scale == 1.0) return image;
    const int h = image.height(), w = image.width();
    Instance whole;
    whole.h = h;
    whole.w = w;
    GeometricParams centred = g;
    centred.dx = 0;
    centred.dy = 0;
    const InstanceTransform t(whole, centred);
    std::vector<float> px(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto [sy, sx] = t.source(y, x);
            px[static_cast<std::size_t>(y) * w + x] =
                std::clamp(bilinear(image, reflect(sy, h), reflect(sx, w)), 0.0f, 1.0f);
        }
    return Image(h, w, std::move(px));
}

SynthesisResult synthesize_one(const ExemplarDataset& exemplar, const Image& background,
                               const std::vector<GeometricParams>& geometry, const IntensityParams& intensity,
                               Rng& rng, const GeometricParams& background_geometry) {
    const int h = exemplar.image.height(), w = exemplar.image.width();
    if (background.height() != h || background.width() != w) {
        throw ValidationError("background and exemplar differ in shape");
    }
    const auto instances = extract_instances(exemplar);
    if (geometry.size() != instances.size()) {
        throw std::invalid_argument("synthesize_one: need one GeometricParams per instance (" +
                                    std::to_string(instances.size()) + ")");
    }

    const Image ex = apply_intensity(exemplar.image, intensity, rng);
    const Image bg = apply_global_geometry(apply_intensity(background, intensity, rng), background_geometry);

    SynthesisResult r;
    std::vector<float> px = bg.pixels();
    std::vector<std::int32_t> cls(px.size(), 0);
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const Instance& inst = instances[i];
        GeometricParams g = geometry[i];
        std::size_t count = 0;
        auto support = support_of(inst, InstanceTransform(inst, g), h, w, count);
        for (int attempt = 0; count == 0 && attempt < kMaxPlacementRetries; ++attempt) {
            int dy_lo, dy_hi, dx_lo, dx_hi;
            if (translation_range(inst, g, h, w, dy_lo, dy_hi, dx_lo, dx_hi)) {
                g.dy = rng.randint(dy_lo, dy_hi);
                g.dx = rng.randint(dx_lo, dx_hi);
            } else {
                g.dy = rng.randint(-h, h);
                g.dx = rng.randint(-w, w);
            }
            support = support_of(inst, InstanceTransform(inst, g), h, w, count);
        }
        if (count == 0) {
            r.warnings.push_back("instance " + std::to_string(i) + " (class " + std::to_string(inst.class_id) +
                                 ") left the canvas after " + std::to_string(kMaxPlacementRetries) +
                                 " retries; skipped");
            r.supports.emplace_back();
            continue;
        }
        const InstanceTransform t(inst, g);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::size_t j = static_cast<std::size_t>(y) * w + x;
                if (!support[j]) continue;
                const auto [sy, sx] = t.source(y, x);
                px[j] = std::clamp(bilinear(ex, sy, sx), 0.0f, 1.0f);
                cls[j] = inst.class_id;
            }
        r.supports.push_back(std::move(support));
    }
    r.image = Image(h, w, std::move(px));
    r.mask = LabelMask(h, w, exemplar.mask.num_classes(), std::move(cls));
    return r;
}

SynthesisDraw sample_synthesis(const std::vector<Instance>& instances, int height, int width,
                               const SynthesisConfig& cfg, Rng& rng) {
    SynthesisDraw d;
    auto draw_shape = [&]() {
        GeometricParams g;
        g.rotation_deg = cfg.max_rotation_deg > 0 ? rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) : 0.0;
        g.scale = cfg.scale_max > cfg.scale_min ? rng.uniform(cfg.scale_min, cfg.scale_max) : cfg.scale_min;
        g.flip_h = rng.bernoulli(cfg.flip_prob);
        g.flip_v = rng.bernoulli(cfg.flip_prob);
        return g;
    };
    for (const auto& inst : instances) {
        GeometricParams g = draw_shape();
        int dy_lo, dy_hi, dx_lo, dx_hi;
        bool fits = translation_range(inst, g, height, width, dy_lo, dy_hi, dx_lo, dx_hi);
        for (int attempt = 0; !fits && attempt < kMaxPlacementRetries; ++attempt) {
            g = draw_shape();
            fits = translation_range(inst, g, height, width, dy_lo, dy_hi, dx_lo, dx_hi);
        }
        if (fits) {
            g.dy = rng.randint(dy_lo, dy_hi);
            g.dx = rng.randint(dx_lo, dx_hi);
        }
        d.geometry.push_back(g);
    }
    d.intensity.brightness_delta = cfg.brightness > 0 ? rng.uniform(-cfg.brightness, cfg.brightness) : 0.0;
    d.intensity.contrast_factor = cfg.contrast > 0 ? rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast) : 1.0;
    d.intensity.noise_sigma = cfg.noise_sigma;
    if (cfg.transform_background) d.background = draw_shape();
    return d;
}

SyntheticDataset build_synthetic_dataset(const ExemplarDataset& exemplar, const UnlabeledDataset& pool,
                                         const SynthesisConfig& cfg, std::vector<std::string>* warnings) {
    if (pool.images.empty()) throw ValidationError("background pool is empty");
    if (cfg.per_background < 1) throw ValidationError("per_background must be at least 1");
    validate_exemplar(exemplar.image, exemplar.mask);
    const auto instances = extract_instances(exemplar);
    const int h = exemplar.image.height(), w = exemplar.image.width();

    const int total = static_cast<int>(pool.images.size()) * cfg.per_background;
    std::vector<SynthesisResult> results(total);
    std::vector<std::exception_ptr> errors(total);
#pragma omp parallel for schedule(dynamic)
    for (int item = 0; item < total; ++item) {
        const int b = item / cfg.per_background, j = item % cfg.per_background;
        try {
            Rng rng = Rng::stream(cfg.seed, 0x5E7, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(j));
            const SynthesisDraw d = sample_synthesis(instances, h, w, cfg, rng);
            results[item] = synthesize_one(exemplar, pool.images[b], d.geometry, d.intensity, rng, d.background);
        } catch (...) {
            errors[item] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    SyntheticDataset ds;
    for (auto& r : results) {
        ds.images.push_back(std::move(r.image));
        ds.masks.push_back(std::move(r.mask));
        if (warnings) warnings->insert(warnings->end(), r.warnings.begin(), r.warnings.end());
    }
    return ds;
}

}  // namespace cmems
