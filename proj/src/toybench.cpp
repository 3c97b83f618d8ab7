#include "cmems/toybench.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "cmems/evalmetrics.hpp"
#include "cmems/rng.hpp"
#include "cmems/trainer.hpp"

namespace cmems {

namespace fs = std::filesystem;

void ToySpec::validate() const {
    auto fail = [](const std::string& w) { throw ValidationError("invalid toy spec: " + w); };
    if (size < 32 || size % 16 != 0) fail("size must be a multiple of 16 and >= 32");
    if (num_unlabeled < 1) fail("num_unlabeled must be >= 1");
    if (num_test_volumes < 0 || num_val_volumes < 0) fail("volume counts must be >= 0");
    if (slices_per_volume < 1) fail("slices_per_volume must be >= 1");
    if (noise_sigma < 0 || texture_amplitude < 0) fail("noise levels must be >= 0");
    for (const Band& b : {background, disk, rectangle, annulus})
        if (!(b.lo <= b.hi)) fail("band lower bound exceeds upper bound");
    if (disk_radius_min < 1 || disk_radius_min > disk_radius_max) fail("disk radius range");
    if (rect_side_min < 2 || rect_side_min > rect_side_max) fail("rectangle side range");
    if (annulus_thickness_min < 1 || annulus_thickness_min > annulus_thickness_max ||
        annulus_outer_min <= annulus_thickness_max || annulus_outer_min > annulus_outer_max)
        fail("annulus range");
}

void to_json(nlohmann::json& j, const ToySpec& s) {
    auto band = [](const Band& b) { return nlohmann::json::array({b.lo, b.hi}); };
    j = {{"size", s.size},
         {"num_unlabeled", s.num_unlabeled},
         {"num_test_volumes", s.num_test_volumes},
         {"num_val_volumes", s.num_val_volumes},
         {"slices_per_volume", s.slices_per_volume},
         {"background", band(s.background)},
         {"disk", band(s.disk)},
         {"rectangle", band(s.rectangle)},
         {"annulus", band(s.annulus)},
         {"noise_sigma", s.noise_sigma},
         {"texture_amplitude", s.texture_amplitude},
         {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, ToySpec& s) {
    const ToySpec d;
    auto band = [&](const char* key, Band def) {
        if (!j.contains(key)) return def;
        const auto& a = j.at(key);
        return Band{a.at(0).get<double>(), a.at(1).get<double>()};
    };
    s.size = j.value("size", d.size);
    s.num_unlabeled = j.value("num_unlabeled", d.num_unlabeled);
    s.num_test_volumes = j.value("num_test_volumes", d.num_test_volumes);
    s.num_val_volumes = j.value("num_val_volumes", d.num_val_volumes);
    s.slices_per_volume = j.value("slices_per_volume", d.slices_per_volume);
    s.background = band("background", d.background);
    s.disk = band("disk", d.disk);
    s.rectangle = band("rectangle", d.rectangle);
    s.annulus = band("annulus", d.annulus);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.texture_amplitude = j.value("texture_amplitude", d.texture_amplitude);
    s.seed = j.value("seed", d.seed);
    s.validate();
}

LabelMask rasterize(const ToyShapes& s, int size) {
    std::vector<std::int32_t> cls(static_cast<std::size_t>(size) * size, 0);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            auto& c = cls[static_cast<std::size_t>(y) * size + x];
            const double dy = y - s.disk_cy, dx = x - s.disk_cx;
            if (dy * dy + dx * dx <= s.disk_r * s.disk_r) c = 1;
            if (y >= s.rect_y0 && y < s.rect_y0 + s.rect_h && x >= s.rect_x0 && x < s.rect_x0 + s.rect_w) c = 2;
            const double ay = y - s.ann_cy, ax = x - s.ann_cx;
            const double r2 = ay * ay + ax * ax;
            if (r2 <= s.ann_outer * s.ann_outer && r2 > s.ann_inner * s.ann_inner) c = 3;
        }
    }
    return LabelMask(size, size, ToySpec::kNumClasses, std::move(cls));
}

namespace {

struct Box {
    double y0, x0, y1, x1;
    bool overlaps(const Box& o, double margin) const {
        return !(y1 + margin < o.y0 || o.y1 + margin < y0 || x1 + margin < o.x0 || o.x1 + margin < x0);
    }
};

// Shape parameters of a whole volume: per-slice radii follow a bump profile
// and centres drift linearly.
struct VolumeShapes {
    ToyShapes base;
    double vy[3], vx[3];
};

ToyShapes slice_shapes(const VolumeShapes& v, int t, int slices) {
    ToyShapes s = v.base;
    if (slices == 1) return s;
    const double u = (t + 0.5) / slices;
    const double scale = 0.75 + 0.25 * std::sin(std::numbers::pi * u);
    const double off = t - (slices - 1) / 2.0;
    s.disk_r = v.base.disk_r * scale;
    s.disk_cy += v.vy[0] * off;
    s.disk_cx += v.vx[0] * off;
    const double rc_y = v.base.rect_y0 + v.base.rect_h / 2.0 + v.vy[1] * off;
    const double rc_x = v.base.rect_x0 + v.base.rect_w / 2.0 + v.vx[1] * off;
    s.rect_h = std::max(2, static_cast<int>(std::lround(v.base.rect_h * scale)));
    s.rect_w = std::max(2, static_cast<int>(std::lround(v.base.rect_w * scale)));
    s.rect_y0 = static_cast<int>(std::lround(rc_y - s.rect_h / 2.0));
    s.rect_x0 = static_cast<int>(std::lround(rc_x - s.rect_w / 2.0));
    const double thick = v.base.ann_outer - v.base.ann_inner;
    s.ann_outer = v.base.ann_outer * scale;
    s.ann_inner = std::max(0.0, s.ann_outer - thick);
    s.ann_cy += v.vy[2] * off;
    s.ann_cx += v.vx[2] * off;
    return s;
}

std::array<Box, 3> boxes(const ToyShapes& s) {
    return {Box{s.disk_cy - s.disk_r, s.disk_cx - s.disk_r, s.disk_cy + s.disk_r, s.disk_cx + s.disk_r},
            Box{double(s.rect_y0), double(s.rect_x0), double(s.rect_y0 + s.rect_h - 1),
                double(s.rect_x0 + s.rect_w - 1)},
            Box{s.ann_cy - s.ann_outer, s.ann_cx - s.ann_outer, s.ann_cy + s.ann_outer, s.ann_cx + s.ann_outer}};
}

VolumeShapes sample_volume(const ToySpec& spec, int slices, Rng& rng) {
    const double k = spec.size / 64.0;
    const int n = spec.size;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        VolumeShapes v{};
        ToyShapes& s = v.base;
        s.disk_r = k * rng.uniform(spec.disk_radius_min, spec.disk_radius_max);
        s.rect_h = static_cast<int>(std::lround(k * rng.randint(spec.rect_side_min, spec.rect_side_max)));
        s.rect_w = static_cast<int>(std::lround(k * rng.randint(spec.rect_side_min, spec.rect_side_max)));
        s.ann_outer = k * rng.uniform(spec.annulus_outer_min, spec.annulus_outer_max);
        s.ann_inner = s.ann_outer - k * rng.uniform(spec.annulus_thickness_min, spec.annulus_thickness_max);
        s.disk_cy = rng.uniform(s.disk_r + 1, n - 2 - s.disk_r);
        s.disk_cx = rng.uniform(s.disk_r + 1, n - 2 - s.disk_r);
        s.rect_y0 = rng.randint(1, n - 1 - s.rect_h);
        s.rect_x0 = rng.randint(1, n - 1 - s.rect_w);
        s.ann_cy = rng.uniform(s.ann_outer + 1, n - 2 - s.ann_outer);
        s.ann_cx = rng.uniform(s.ann_outer + 1, n - 2 - s.ann_outer);
        for (int i = 0; i < 3; ++i) {
            v.vy[i] = slices > 1 ? rng.uniform(-0.5, 0.5) : 0.0;
            v.vx[i] = slices > 1 ? rng.uniform(-0.5, 0.5) : 0.0;
        }
        bool ok = true;
        for (int t = 0; t < slices && ok; ++t) {
            const auto b = boxes(slice_shapes(v, t, slices));
            for (const auto& bx : b)
                if (bx.y0 < 0.5 || bx.x0 < 0.5 || bx.y1 > n - 1.5 || bx.x1 > n - 1.5) ok = false;
            if (b[0].overlaps(b[1], 2) || b[0].overlaps(b[2], 2) || b[1].overlaps(b[2], 2)) ok = false;
        }
        if (ok) return v;
    }
    throw ValidationError("toy spec: shapes do not fit on the canvas");
}

// Image of one slice given its mask and per-volume appearance.
struct Appearance {
    double bg, level[3], shift;
    double fy[3], fx[3], phase[3];
};

Appearance sample_appearance(const ToySpec& spec, Rng& rng) {
    Appearance a{};
    a.bg = rng.uniform(spec.background.lo, spec.background.hi);
    a.level[0] = rng.uniform(spec.disk.lo, spec.disk.hi);
    a.level[1] = rng.uniform(spec.rectangle.lo, spec.rectangle.hi);
    a.level[2] = rng.uniform(spec.annulus.lo, spec.annulus.hi);
    a.shift = rng.uniform(-0.05, 0.05);
    for (int i = 0; i < 3; ++i) {
        a.fy[i] = rng.uniform(0.5, 3.0);
        a.fx[i] = rng.uniform(0.5, 3.0);
        a.phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return a;
}

Image render(const ToySpec& spec, const LabelMask& mask, const Appearance& a, Rng& rng) {
    const int n = spec.size;
    std::vector<double> v(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            double tex = 0;
            for (int i = 0; i < 3; ++i)
                tex += std::sin(2 * std::numbers::pi * (a.fy[i] * y + a.fx[i] * x) / n + a.phase[i]);
            const int c = mask.at(y, x);
            const double base = c == 0 ? a.bg + spec.texture_amplitude * tex / 3.0 : a.level[c - 1];
            v[static_cast<std::size_t>(y) * n + x] = base + a.shift + rng.normal(0.0, spec.noise_sigma);
        }
    }
    for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
    return Image(n, n, minmax_normalize(v));
}

TestVolume make_volume(const ToySpec& spec, const std::string& id, Rng& rng) {
    TestVolume vol;
    vol.id = id;
    const VolumeShapes shapes = sample_volume(spec, spec.slices_per_volume, rng);
    const Appearance app = sample_appearance(spec, rng);
    for (int t = 0; t < spec.slices_per_volume; ++t) {
        vol.labels.push_back(rasterize(slice_shapes(shapes, t, spec.slices_per_volume), spec.size));
        vol.slices.push_back(render(spec, vol.labels.back(), app, rng));
    }
    return vol;
}

std::pair<Image, LabelMask> make_single(const ToySpec& spec, Rng& rng) {
    const VolumeShapes shapes = sample_volume(spec, 1, rng);
    LabelMask mask = rasterize(shapes.base, spec.size);
    const Appearance app = sample_appearance(spec, rng);
    Image img = render(spec, mask, app, rng);
    return {std::move(img), std::move(mask)};
}

}  // namespace

LoadedData generate_toy_data(const ToySpec& spec) {
    spec.validate();
    LoadedData d;
    d.num_classes = ToySpec::kNumClasses;
    d.class_names = {"background", "disk", "rectangle", "annulus"};
    {
        Rng rng = Rng::stream(spec.seed, 0x70E, 0);
        auto [img, mask] = make_single(spec, rng);
        d.exemplar = ExemplarDataset{std::move(img), std::move(mask)};
        validate_exemplar(d.exemplar.image, d.exemplar.mask);
    }
    for (int i = 0; i < spec.num_unlabeled; ++i) {
        Rng rng = Rng::stream(spec.seed, 0x70E, 1, static_cast<std::uint64_t>(i));
        d.unlabeled.images.push_back(make_single(spec, rng).first);
    }
    for (int i = 0; i < spec.num_test_volumes; ++i) {
        Rng rng = Rng::stream(spec.seed, 0x70E, 2, static_cast<std::uint64_t>(i));
        d.test_volumes.push_back(make_volume(spec, "test_" + std::to_string(i), rng));
    }
    for (int i = 0; i < spec.num_val_volumes; ++i) {
        Rng rng = Rng::stream(spec.seed, 0x70E, 3, static_cast<std::uint64_t>(i));
        d.val_volumes.push_back(make_volume(spec, "val_" + std::to_string(i), rng));
    }
    return d;
}

DatasetManifest generate_toy(const ToySpec& spec, const fs::path& dir) {
    const LoadedData d = generate_toy_data(spec);
    fs::create_directories(dir / "unlabeled");
    DatasetManifest m;
    m.num_classes = d.num_classes;
    m.class_names = d.class_names;
    m.height = spec.size;
    m.width = spec.size;
    m.exemplar = "exemplar.npy";
    m.exemplar_label = "exemplar_label.npy";
    save_image(dir / m.exemplar, d.exemplar.image);
    save_mask(dir / m.exemplar_label, d.exemplar.mask);
    for (std::size_t i = 0; i < d.unlabeled.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "unlabeled/u_%03zu.npy", i);
        save_image(dir / name, d.unlabeled.images[i]);
        m.unlabeled.emplace_back(name);
    }
    auto write_volumes = [&](const std::vector<TestVolume>& vols, const std::string& sub,
                             std::vector<VolumeEntry>& entries) {
        for (const auto& v : vols) {
            const fs::path vd = fs::path(sub) / v.id;
            fs::create_directories(dir / vd);
            VolumeEntry e;
            e.id = v.id;
            for (std::size_t t = 0; t < v.slices.size(); ++t) {
                char s[32], l[32];
                std::snprintf(s, sizeof s, "slice_%02zu.npy", t);
                std::snprintf(l, sizeof l, "label_%02zu.npy", t);
                save_image(dir / vd / s, v.slices[t]);
                save_mask(dir / vd / l, v.labels[t]);
                e.slices.push_back((vd / s).generic_string());
                e.labels.push_back((vd / l).generic_string());
            }
            entries.push_back(std::move(e));
        }
    };
    write_volumes(d.test_volumes, "test", m.test_volumes);
    write_volumes(d.val_volumes, "val", m.val_volumes);
    write_manifest(dir / "manifest.json", m);
    std::ofstream(dir / "toyspec.json") << nlohmann::json(spec).dump(2) << "\n";
    return m;
}

TrainConfig AblationVariant::apply(TrainConfig c) const {
    c.use_synthetic = sd;
    c.use_ip = ip;
    c.use_fp = fp;
    c.cross_ip = cm;
    c.cross_fp = cross_fp.value_or(cm);
    c.same_weak_unlabeled = same_weak_unlabeled;
    return c;
}

std::vector<AblationVariant> component_variants() {
    return {
        {"exemplar-only", false, false, false, false, std::nullopt, false},
        {"SD", true, false, false, false, std::nullopt, false},
        {"SD+IP", true, false, true, false, std::nullopt, false},
        {"SD+CM+IP", true, true, true, false, std::nullopt, false},
        {"SD+CM+IP+FP", true, true, true, true, std::nullopt, false},
    };
}

std::vector<AblationVariant> weak_view_variants() {
    return {
        {"SD+CM+IP+FP", true, true, true, true, std::nullopt, false},
        {"same-weak-unlabeled", true, true, true, true, std::nullopt, true},
    };
}

std::vector<AblationVariant> fp_pairing_variants() {
    return {
        {"SD+CM+IP+FP", true, true, true, true, std::nullopt, false},
        {"individual-fp", true, true, true, true, false, false},
    };
}

const AblationRow& AblationResult::row(const std::string& name) const {
    for (const auto& r : rows)
        if (r.name == name) return r;
    throw std::out_of_range("no ablation row named " + name);
}

AblationResult run_ablation(const std::vector<AblationVariant>& variants, const LoadedData& data,
                            const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                            const std::function<void(const AblationProgress&)>& progress) {
    if (seeds.empty()) throw ValidationError("ablation needs at least one seed");
    const int nv = static_cast<int>(variants.size()), ns = static_cast<int>(seeds.size());
    std::vector<double> dsc(static_cast<std::size_t>(nv) * ns, 0.0);
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) collapse(2)
    for (int v = 0; v < nv; ++v) {
        for (int s = 0; s < ns; ++s) {
            try {
                TrainConfig cfg = variants[v].apply(base);
                cfg.seed = seeds[s];
                cfg.synthesis.seed = seeds[s];
                cfg.eval_every = 0;
                const TrainData td = make_train_data(data, cfg);
                const FitResult fr = fit(td, cfg);
                const double d = report(evaluate_all(fr.state.nets, data.test_volumes, cfg.eval_network)).dsc_avg;
                dsc[static_cast<std::size_t>(v) * ns + s] = d;
                if (progress) {
#pragma omp critical(cmems_ablation_progress)
                    progress({variants[v].name, seeds[s], d});
                }
            } catch (...) {
#pragma omp critical(cmems_ablation_error)
                error = std::current_exception();
            }
        }
    }
    if (error) std::rethrow_exception(error);
    AblationResult r;
    for (int v = 0; v < nv; ++v) {
        AblationRow row;
        row.name = variants[v].name;
        row.seeds = seeds;
        row.dsc.assign(dsc.begin() + static_cast<std::ptrdiff_t>(v) * ns,
                       dsc.begin() + static_cast<std::ptrdiff_t>(v + 1) * ns);
        for (double d : row.dsc) row.mean += d;
        row.mean /= ns;
        for (double d : row.dsc) row.stddev += (d - row.mean) * (d - row.mean);
        row.stddev = ns > 1 ? std::sqrt(row.stddev / (ns - 1)) : 0.0;
        r.rows.push_back(std::move(row));
    }
    return r;
}

void write_ablation_csv(const fs::path& path, const AblationResult& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "variant,seed,dsc\n";
    os << std::setprecision(10);
    for (const auto& row : r.rows)
        for (std::size_t i = 0; i < row.seeds.size(); ++i) os << row.name << "," << row.seeds[i] << "," << row.dsc[i] << "\n";
    for (const auto& row : r.rows) os << row.name << ",mean," << row.mean << "\n";
}

nlohmann::json to_json(const AblationResult& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"variant", row.name}, {"seeds", row.seeds}, {"dsc", row.dsc}, {"mean", row.mean},
                        {"std", row.stddev}});
    return {{"rows", rows}};
}

}  // namespace cmems
