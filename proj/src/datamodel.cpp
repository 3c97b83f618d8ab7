#include "cmems/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cmems {
namespace fs = std::filesystem;

Image::Image(int height, int width, std::vector<float> pixels) : h_(height), w_(width), px_(std::move(pixels)) {
    if (h_ < 16 || w_ < 16 || h_ % 16 != 0 || w_ % 16 != 0) {
        throw ValidationError("image size " + std::to_string(h_) + "x" + std::to_string(w_) +
                              " must be at least 16 and divisible by 16");
    }
    if (px_.size() != static_cast<std::size_t>(h_) * w_) {
        throw ValidationError("image pixel count does not match its shape");
    }
    for (float v : px_) {
        if (!std::isfinite(v)) throw ValidationError("image contains a non-finite value");
    }
}

Image::Image(int height, int width, float value)
    : Image(height, width, std::vector<float>(static_cast<std::size_t>(height) * width, value)) {}

LabelMask::LabelMask(int height, int width, int num_classes, std::vector<std::int32_t> classes)
    : h_(height), w_(width), k_(num_classes), cls_(std::move(classes)) {
    if (h_ <= 0 || w_ <= 0) throw ValidationError("label mask must be non-empty");
    if (k_ < 1) throw ValidationError("label mask needs at least one class");
    if (cls_.size() != static_cast<std::size_t>(h_) * w_) {
        throw ValidationError("label mask pixel count does not match its shape");
    }
    for (auto c : cls_) {
        if (c < 0 || c >= k_) {
            throw ValidationError("label value " + std::to_string(c) + " outside [0," + std::to_string(k_) + ")");
        }
    }
}

LabelMask::LabelMask(int height, int width, int num_classes)
    : LabelMask(height, width, num_classes, std::vector<std::int32_t>(static_cast<std::size_t>(height) * width, 0)) {}

std::size_t LabelMask::count(int k) const {
    return static_cast<std::size_t>(std::count(cls_.begin(), cls_.end(), k));
}

std::size_t PseudoLabel::valid_count() const {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

PseudoLabel dense_target(const std::vector<LabelMask>& masks) {
    PseudoLabel t;
    if (masks.empty()) return t;
    t.n = static_cast<int>(masks.size());
    t.h = masks.front().height();
    t.w = masks.front().width();
    t.classes.reserve(t.size());
    for (const auto& m : masks) {
        if (m.height() != t.h || m.width() != t.w) throw ShapeError("dense_target: masks differ in shape");
        t.classes.insert(t.classes.end(), m.classes().begin(), m.classes().end());
    }
    t.valid.assign(t.size(), 1);
    return t;
}

void validate_exemplar(const Image& image, const LabelMask& mask) {
    if (image.height() != mask.height() || image.width() != mask.width()) {
        throw ValidationError("exemplar image and mask differ in shape");
    }
    for (int k = 1; k < mask.num_classes(); ++k) {
        if (mask.count(k) == 0) {
            throw ValidationError("exemplar mask lacks class " + std::to_string(k) + " of K=" +
                                  std::to_string(mask.num_classes()));
        }
    }
}

// --- manifest -------------------------------------------------------------

namespace {

void volumes_to_json(nlohmann::json& arr, const std::vector<VolumeEntry>& vols) {
    arr = nlohmann::json::array();
    for (const auto& v : vols) {
        nlohmann::json e{{"slices", v.slices}, {"labels", v.labels}};
        if (!v.id.empty()) e["id"] = v.id;
        arr.push_back(std::move(e));
    }
}

std::vector<VolumeEntry> volumes_from_json(const nlohmann::json& arr) {
    std::vector<VolumeEntry> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& e = arr[i];
        VolumeEntry v;
        v.id = e.value("id", "case" + std::to_string(i));
        v.slices = e.at("slices").get<std::vector<std::string>>();
        v.labels = e.at("labels").get<std::vector<std::string>>();
        if (v.slices.size() != v.labels.size()) {
            throw ValidationError("volume " + v.id + ": slice and label counts differ");
        }
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace

void to_json(nlohmann::json& j, const DatasetManifest& m) {
    j = nlohmann::json{{"exemplar", m.exemplar},
                       {"exemplar_label", m.exemplar_label},
                       {"unlabeled", m.unlabeled},
                       {"num_classes", m.num_classes}};
    volumes_to_json(j["test_volumes"], m.test_volumes);
    if (!m.val_volumes.empty()) volumes_to_json(j["val_volumes"], m.val_volumes);
    if (!m.class_names.empty()) j["class_names"] = m.class_names;
    if (m.height) j["height"] = *m.height;
    if (m.width) j["width"] = *m.width;
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
    m.exemplar = j.at("exemplar").get<std::string>();
    m.exemplar_label = j.at("exemplar_label").get<std::string>();
    m.unlabeled = j.at("unlabeled").get<std::vector<std::string>>();
    m.num_classes = j.at("num_classes").get<int>();
    m.test_volumes = volumes_from_json(j.value("test_volumes", nlohmann::json::array()));
    m.val_volumes = volumes_from_json(j.value("val_volumes", nlohmann::json::array()));
    m.class_names = j.value("class_names", std::vector<std::string>{});
    if (j.contains("height")) m.height = j["height"].get<int>();
    if (j.contains("width")) m.width = j["width"].get<int>();
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IngestionError("missing or unreadable manifest: " + path.string());
    try {
        return nlohmann::json::parse(f).get<DatasetManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
    std::ofstream f(path);
    if (!f) throw IngestionError("cannot write " + path.string());
    f << nlohmann::json(m).dump(2) << '\n';
}

// --- arrays ---------------------------------------------------------------

std::vector<float> minmax_normalize(const std::vector<double>& values) {
    std::vector<float> out(values.size(), 0.0f);
    if (values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    if (range <= 0.0) return out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<float>((values[i] - *lo) / range);
    }
    return out;
}

std::vector<float> resize_bilinear(const std::vector<float>& src, int sh, int sw, int dh, int dw) {
    if (sh == dh && sw == dw) return src;
    std::vector<float> dst(static_cast<std::size_t>(dh) * dw);
    const double sy = static_cast<double>(sh) / dh;
    const double sx = static_cast<double>(sw) / dw;
    for (int y = 0; y < dh; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), sh - 1);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double ty = fy - y0;
        for (int x = 0; x < dw; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), sw - 1);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double tx = fx - x0;
            const double top = src[y0 * sw + x0] * (1 - tx) + src[y0 * sw + x1] * tx;
            const double bot = src[y1 * sw + x0] * (1 - tx) + src[y1 * sw + x1] * tx;
            dst[static_cast<std::size_t>(y) * dw + x] = static_cast<float>(top * (1 - ty) + bot * ty);
        }
    }
    return dst;
}

std::vector<std::int32_t> resize_nearest(const std::vector<std::int32_t>& src, int sh, int sw, int dh, int dw) {
    if (sh == dh && sw == dw) return src;
    std::vector<std::int32_t> dst(static_cast<std::size_t>(dh) * dw);
    for (int y = 0; y < dh; ++y) {
        const int ys = std::min(static_cast<int>((y + 0.5) * sh / dh), sh - 1);
        for (int x = 0; x < dw; ++x) {
            const int xs = std::min(static_cast<int>((x + 0.5) * sw / dw), sw - 1);
            dst[static_cast<std::size_t>(y) * dw + x] = src[static_cast<std::size_t>(ys) * sw + xs];
        }
    }
    return dst;
}

namespace {

std::pair<int, int> plane_shape(const npy::Array& a, const fs::path& path) {
    if (a.shape.size() == 2) return {static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1])};
    if (a.shape.size() == 3 && a.shape[0] == 1) return {static_cast<int>(a.shape[1]), static_cast<int>(a.shape[2])};
    throw ValidationError(path.string() + ": expected a 2-D array (H,W) or (1,H,W)");
}

}  // namespace

Image load_image(const fs::path& path, int height, int width) {
    const npy::Array a = npy::read(path);
    const auto [h, w] = plane_shape(a, path);
    for (double v : a.values) {
        if (!std::isfinite(v)) throw ValidationError(path.string() + ": non-finite intensity");
    }
    // Normalize, resize, then clamp: bilinear weights keep values in range up to rounding.
    auto px = resize_bilinear(minmax_normalize(a.values), h, w, height, width);
    for (auto& v : px) v = std::clamp(v, 0.0f, 1.0f);
    return Image(height, width, std::move(px));
}

LabelMask load_mask(const fs::path& path, int num_classes, int height, int width) {
    const npy::Array a = npy::read(path);
    const auto [h, w] = plane_shape(a, path);
    std::vector<std::int32_t> cls(a.values.size());
    for (std::size_t i = 0; i < cls.size(); ++i) {
        const double v = a.values[i];
        if (v != std::floor(v) || v < 0 || v >= num_classes) {
            throw ValidationError(path.string() + ": label value " + std::to_string(v) + " outside [0," +
                                  std::to_string(num_classes) + ")");
        }
        cls[i] = static_cast<std::int32_t>(v);
    }
    return LabelMask(height, width, num_classes, resize_nearest(cls, h, w, height, width));
}

void save_image(const fs::path& path, const Image& image) {
    npy::write(path, std::span<const float>(image.pixels()),
               {static_cast<std::size_t>(image.height()), static_cast<std::size_t>(image.width())});
}

void save_mask(const fs::path& path, const LabelMask& mask) {
    npy::write(path, std::span<const std::int32_t>(mask.classes()),
               {static_cast<std::size_t>(mask.height()), static_cast<std::size_t>(mask.width())});
}

namespace {

// Raw shapes must agree before resizing, otherwise resizing would hide the mismatch.
void check_pair_shape(const fs::path& img, const fs::path& lbl) {
    const auto a = npy::read(img);
    const auto b = npy::read(lbl);
    if (plane_shape(a, img) != plane_shape(b, lbl)) {
        throw ValidationError("shape mismatch between " + img.string() + " and " + lbl.string());
    }
}

TestVolume load_volume(const fs::path& root, const VolumeEntry& e, int k, int h, int w) {
    TestVolume v;
    v.id = e.id;
    for (std::size_t i = 0; i < e.slices.size(); ++i) {
        check_pair_shape(root / e.slices[i], root / e.labels[i]);
        v.slices.push_back(load_image(root / e.slices[i], h, w));
        v.labels.push_back(load_mask(root / e.labels[i], k, h, w));
    }
    return v;
}

}  // namespace

LoadedData load_dataset(const fs::path& root, const DatasetManifest& m, const LoadOptions& opts) {
    if (m.num_classes < 2) throw ValidationError("manifest num_classes must be at least 2");
    const int h = opts.height.value_or(m.height.value_or(224));
    const int w = opts.width.value_or(m.width.value_or(224));

    LoadedData d;
    d.num_classes = m.num_classes;
    d.class_names = m.class_names;
    if (d.class_names.empty()) {
        d.class_names.push_back("background");
        for (int k = 1; k < m.num_classes; ++k) d.class_names.push_back("class" + std::to_string(k));
    }
    if (static_cast<int>(d.class_names.size()) != m.num_classes) {
        throw ValidationError("class_names has " + std::to_string(d.class_names.size()) + " entries, expected " +
                              std::to_string(m.num_classes));
    }

    check_pair_shape(root / m.exemplar, root / m.exemplar_label);
    d.exemplar.image = load_image(root / m.exemplar, h, w);
    d.exemplar.mask = load_mask(root / m.exemplar_label, m.num_classes, h, w);
    validate_exemplar(d.exemplar.image, d.exemplar.mask);

    if (m.unlabeled.empty()) throw ValidationError("manifest lists no unlabeled images");
    for (const auto& p : m.unlabeled) d.unlabeled.images.push_back(load_image(root / p, h, w));
    for (const auto& e : m.test_volumes) d.test_volumes.push_back(load_volume(root, e, m.num_classes, h, w));
    for (const auto& e : m.val_volumes) d.val_volumes.push_back(load_volume(root, e, m.num_classes, h, w));
    return d;
}

LoadedData load_dataset(const fs::path& manifest_path, const LoadOptions& opts) {
    return load_dataset(manifest_path.parent_path(), read_manifest(manifest_path), opts);
}

Tensor one_hot(const LabelMask& mask) {
    Tensor t(1, mask.num_classes(), mask.height(), mask.width());
    const std::size_t plane = t.shape().plane();
    for (std::size_t i = 0; i < plane; ++i) t.plane(0, mask.classes()[i])[i] = real(1);
    return t;
}

Tensor to_tensor(const std::vector<Image>& images) {
    if (images.empty()) return {};
    const int h = images.front().height();
    const int w = images.front().width();
    Tensor t(static_cast<int>(images.size()), 1, h, w);
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (images[n].height() != h || images[n].width() != w) throw ShapeError("to_tensor: images differ in shape");
        std::copy(images[n].pixels().begin(), images[n].pixels().end(), t.plane(static_cast<int>(n), 0));
    }
    return t;
}

Tensor to_tensor(const Image& image) { return to_tensor(std::vector<Image>{image}); }

}  // namespace cmems
