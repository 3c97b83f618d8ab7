#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmems/datamodel.hpp"
#include "cmems/rng.hpp"

namespace cmems {

/// Per-instance geometry. Flip, scale and rotation act about the instance's
/// bounding-box centre; (dx, dy) then shifts it on the canvas.
struct GeometricParams {
    double rotation_deg = 0.0;
    bool flip_h = false;
    bool flip_v = false;
    double scale = 1.0;
    int dx = 0;
    int dy = 0;
};

/// x -> clamp((x - mean)·contrast + mean + brightness + N(0, σ²)).
struct IntensityParams {
    double brightness_delta = 0.0;
    double contrast_factor = 1.0;
    double noise_sigma = 0.0;
};

struct SynthesisConfig {
    int per_background = 10;
    double max_rotation_deg = 20.0;
    double scale_min = 0.8;
    double scale_max = 1.25;
    double flip_prob = 0.5;
    double brightness = 0.1;
    double contrast = 0.1;
    double noise_sigma = 0.01;
    /// Also apply a random flip/rotation/scale to the background itself.
    bool transform_background = true;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SynthesisConfig& c);
void from_json(const nlohmann::json& j, SynthesisConfig& c);

/// One connected foreground component of the exemplar (4-connectivity).
struct Instance {
    int class_id = 0;
    int y0 = 0, x0 = 0, h = 0, w = 0;  // bounding box
    std::vector<std::uint8_t> mask;     // h×w
    std::size_t pixel_count = 0;
};

/// Components ordered by class id, then by first pixel in raster order.
std::vector<Instance> extract_instances(const ExemplarDataset& exemplar);

/// Affine map of one instance onto the canvas.
class InstanceTransform {
public:
    InstanceTransform(const Instance& inst, const GeometricParams& g);
    /// Canvas position -> exemplar position.
    std::pair<double, double> source(double y, double x) const;
    /// Conservative canvas bounding box of the transformed instance: y0, x0, y1, x1 (inclusive).
    std::array<double, 4> bounds() const;

private:
    double cy_, cx_;
    double a_, b_, c_, d_;  // inverse linear part
    double ty_, tx_;
    std::array<double, 4> bounds_;
};

struct SynthesisResult {
    Image image;
    LabelMask mask;
    /// Canvas support of each pasted instance (empty vector when skipped).
    std::vector<std::vector<std::uint8_t>> supports;
    std::vector<std::string> warnings;
};

/// Copy-transform-paste of every exemplar instance onto one background.
/// `geometry` holds one entry per instance from extract_instances. Later
/// instances overwrite earlier ones. An instance whose support misses the
/// canvas is re-translated up to 10 times (when rng is given), then skipped.
SynthesisResult synthesize_one(const ExemplarDataset& exemplar, const Image& background,
                               const std::vector<GeometricParams>& geometry, const IntensityParams& intensity,
                               Rng& rng, const GeometricParams& background_geometry = {});

/// |pool| × per_background items, item (b, j) drawn from stream (seed, b, j).
SyntheticDataset build_synthetic_dataset(const ExemplarDataset& exemplar, const UnlabeledDataset& background_pool,
                                         const SynthesisConfig& cfg, std::vector<std::string>* warnings = nullptr);

/// Random parameters for one item, as used by build_synthetic_dataset.
struct SynthesisDraw {
    std::vector<GeometricParams> geometry;
    IntensityParams intensity;
    GeometricParams background;
};
SynthesisDraw sample_synthesis(const std::vector<Instance>& instances, int height, int width,
                               const SynthesisConfig& cfg, Rng& rng);

Image apply_intensity(const Image& image, const IntensityParams& p, Rng& rng);
/// Whole-image flip/rotation/scale about the centre with reflect padding.
Image apply_global_geometry(const Image& image, const GeometricParams& g);

}  // namespace cmems
