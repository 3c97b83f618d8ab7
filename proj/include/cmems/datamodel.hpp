#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmems/npy.hpp"
#include "cmems/tensor.hpp"

namespace cmems {

/// Data violates a domain invariant (shape, class range, completeness).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Single-channel intensity image in [0,1]. H and W are multiples of 16.
class Image {
public:
    Image() = default;
    Image(int height, int width, std::vector<float> pixels);
    /// Constant image.
    Image(int height, int width, float value);

    int height() const { return h_; }
    int width() const { return w_; }
    const std::vector<float>& pixels() const { return px_; }
    float at(int y, int x) const { return px_[static_cast<std::size_t>(y) * w_ + x]; }

    bool operator==(const Image&) const = default;

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<float> px_;
};

/// Per-pixel class map over K classes; 0 is background.
class LabelMask {
public:
    LabelMask() = default;
    LabelMask(int height, int width, int num_classes, std::vector<std::int32_t> classes);
    LabelMask(int height, int width, int num_classes);  // all background

    int height() const { return h_; }
    int width() const { return w_; }
    int num_classes() const { return k_; }
    const std::vector<std::int32_t>& classes() const { return cls_; }
    std::int32_t at(int y, int x) const { return cls_[static_cast<std::size_t>(y) * w_ + x]; }

    std::size_t count(int k) const;
    bool operator==(const LabelMask&) const = default;

private:
    int h_ = 0;
    int w_ = 0;
    int k_ = 0;
    std::vector<std::int32_t> cls_;
};

/// Batch of per-pixel class distributions, N×K×H×W.
struct ProbMap {
    Tensor probs;
};

/// Confidence-filtered targets. `valid` is 1 where the pixel supervises.
struct PseudoLabel {
    int n = 0;
    int h = 0;
    int w = 0;
    std::vector<std::int32_t> classes;
    std::vector<std::uint8_t> valid;

    std::size_t size() const { return static_cast<std::size_t>(n) * h * w; }
    std::size_t valid_count() const;
};

/// Dense target from ground-truth masks: every pixel valid.
PseudoLabel dense_target(const std::vector<LabelMask>& masks);

struct ExemplarDataset {
    Image image;
    LabelMask mask;
};

struct UnlabeledDataset {
    std::vector<Image> images;
};

struct SyntheticDataset {
    std::vector<Image> images;
    std::vector<LabelMask> masks;

    std::size_t size() const { return images.size(); }
};

struct TestVolume {
    std::string id;
    std::vector<Image> slices;
    std::vector<LabelMask> labels;
};

/// Every foreground class 1..K-1 present, shapes paired.
void validate_exemplar(const Image& image, const LabelMask& mask);

struct VolumeEntry {
    std::string id;
    std::vector<std::string> slices;
    std::vector<std::string> labels;
};

/// JSON dataset manifest. Paths are relative to the manifest's directory.
struct DatasetManifest {
    std::string exemplar;
    std::string exemplar_label;
    std::vector<std::string> unlabeled;
    std::vector<VolumeEntry> test_volumes;
    std::vector<VolumeEntry> val_volumes;
    int num_classes = 0;
    std::vector<std::string> class_names;
    std::optional<int> height;
    std::optional<int> width;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);

struct LoadedData {
    ExemplarDataset exemplar;
    UnlabeledDataset unlabeled;
    std::vector<TestVolume> test_volumes;
    std::vector<TestVolume> val_volumes;
    int num_classes = 0;
    std::vector<std::string> class_names;
};

struct LoadOptions {
    /// Overrides the manifest size; default 224×224 when neither is given.
    std::optional<int> height;
    std::optional<int> width;
};

LoadedData load_dataset(const std::filesystem::path& root, const DatasetManifest& manifest,
                        const LoadOptions& opts = {});
/// Reads the manifest file and resolves paths against its directory.
LoadedData load_dataset(const std::filesystem::path& manifest_path, const LoadOptions& opts = {});

Image load_image(const std::filesystem::path& path, int height, int width);
LabelMask load_mask(const std::filesystem::path& path, int num_classes, int height, int width);
void save_image(const std::filesystem::path& path, const Image& image);
void save_mask(const std::filesystem::path& path, const LabelMask& mask);

/// Min-max normalization to [0,1]; a constant input maps to zeros.
std::vector<float> minmax_normalize(const std::vector<double>& values);

/// Half-pixel-centred bilinear resampling of a raw H×W grid.
std::vector<float> resize_bilinear(const std::vector<float>& src, int sh, int sw, int dh, int dw);
/// Nearest-neighbour resampling; never invents class values.
std::vector<std::int32_t> resize_nearest(const std::vector<std::int32_t>& src, int sh, int sw, int dh, int dw);

/// 1×K×H×W binary tensor; channel k is 1 where the mask equals k.
Tensor one_hot(const LabelMask& mask);

/// Stacks images into an N×1×H×W tensor.
Tensor to_tensor(const std::vector<Image>& images);
Tensor to_tensor(const Image& image);

}  // namespace cmems
