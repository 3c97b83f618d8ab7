#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmems/config.hpp"
#include "cmems/datamodel.hpp"

namespace cmems {

/// Intensity band [lo, hi] from which a shape's mean intensity is drawn.
struct Band {
    double lo = 0, hi = 0;
};

/// Procedural stand-in for a medical dataset: background plus a disk
/// (class 1), a rectangle (class 2) and an annulus (class 3).
struct ToySpec {
    int size = 64;
    int num_unlabeled = 40;
    int num_test_volumes = 5;
    int num_val_volumes = 2;
    int slices_per_volume = 8;
    Band background{0.20, 0.40};
    Band disk{0.45, 0.65};
    Band rectangle{0.40, 0.60};
    Band annulus{0.50, 0.70};
    /// Per-pixel Gaussian noise and the amplitude of the smooth background texture.
    double noise_sigma = 0.08;
    double texture_amplitude = 0.10;
    std::uint64_t seed = 0;

    // Shape size ranges in pixels at the default 64×64 canvas; scaled with size.
    int disk_radius_min = 5, disk_radius_max = 9;
    int rect_side_min = 8, rect_side_max = 16;
    int annulus_outer_min = 7, annulus_outer_max = 10;
    int annulus_thickness_min = 2, annulus_thickness_max = 4;

    static constexpr int kNumClasses = 4;
    void validate() const;
};

void to_json(nlohmann::json& j, const ToySpec& s);
void from_json(const nlohmann::json& j, ToySpec& s);

/// Geometry of one toy slice.
struct ToyShapes {
    double disk_cy, disk_cx, disk_r;
    int rect_y0, rect_x0, rect_h, rect_w;
    double ann_cy, ann_cx, ann_outer, ann_inner;
};

/// Exact rasterization: pixel centres inside each shape. Shapes never overlap.
LabelMask rasterize(const ToyShapes& s, int size);

/// Generates everything in memory.
LoadedData generate_toy_data(const ToySpec& spec);
/// Writes NPY files plus manifest.json under `dir` and returns the manifest.
DatasetManifest generate_toy(const ToySpec& spec, const std::filesystem::path& dir);

/// One row of the ablation table.
struct AblationVariant {
    std::string name;
    bool sd = true;   // synthetic data
    bool cm = true;   // cross-model pairing for both unlabeled terms
    bool ip = true;   // image-perturbation term
    bool fp = true;   // feature-perturbation term
    /// cross_fp override; defaults to cm.
    std::optional<bool> cross_fp;
    bool same_weak_unlabeled = false;

    TrainConfig apply(TrainConfig base) const;
};

/// Exemplar-only, +SD, SD+IP (self-paired), SD+CM+IP, full.
std::vector<AblationVariant> component_variants();
/// Full method vs. both networks sharing one weak view of each unlabeled image.
std::vector<AblationVariant> weak_view_variants();
/// Cross-model vs. individual-model pairing of the feature-perturbed predictions.
std::vector<AblationVariant> fp_pairing_variants();

struct AblationRow {
    std::string name;
    std::vector<std::uint64_t> seeds;
    std::vector<double> dsc;
    double mean = 0, stddev = 0;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    const AblationRow& row(const std::string& name) const;
};

struct AblationProgress {
    std::string variant;
    std::uint64_t seed;
    double dsc;
};

/// Trains every variant for every seed on the same data and reports the mean
/// test DSC. Runs are independent and execute in parallel.
AblationResult run_ablation(const std::vector<AblationVariant>& variants, const LoadedData& data,
                            const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                            const std::function<void(const AblationProgress&)>& progress = {});

void write_ablation_csv(const std::filesystem::path& path, const AblationResult& r);
nlohmann::json to_json(const AblationResult& r);

}  // namespace cmems
