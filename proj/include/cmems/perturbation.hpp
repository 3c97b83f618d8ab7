#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "cmems/datamodel.hpp"
#include "cmems/rng.hpp"
#include "cmems/segnet.hpp"

namespace cmems {

// --- weak: label-preserving geometry --------------------------------------

struct WeakConfig {
    double max_small_rotation_deg = 20.0;
    double flip_prob = 0.5;
    bool quarter_turns = true;  // only applied to square images
};

/// Flips, then a multiple of 90°, then a small rotation about the image centre.
struct WeakParams {
    int quarter_turns = 0;  // counter-clockwise, 0..3
    double small_rotation_deg = 0.0;
    bool flip_h = false;
    bool flip_v = false;

    bool is_identity() const { return quarter_turns == 0 && small_rotation_deg == 0.0 && !flip_h && !flip_v; }
    bool operator==(const WeakParams&) const = default;
};

WeakParams sample_weak(Rng& rng, const WeakConfig& cfg, int height, int width);
Image apply_weak(const Image& image, const WeakParams& p);
/// Same geometry as the image overload, nearest-neighbour sampling.
LabelMask apply_weak(const LabelMask& mask, const WeakParams& p);

struct WeakResult {
    Image image;
    std::optional<LabelMask> mask;
    WeakParams params;
};

/// One weak draw applied identically to the image and (optionally) its mask.
WeakResult weak(const Image& image, const LabelMask* mask, Rng& rng, const WeakConfig& cfg = {});

// --- strong: photometric jitter --------------------------------------------

/// Grey-level colour jitter: brightness scale, contrast about the mean, gamma.
struct StrongParams {
    double brightness = 1.0;
    double contrast = 1.0;
    double gamma = 1.0;
};

/// brightness, contrast ~ U[max(0,1-α), 1+α]; gamma ~ U[max(0.1,1-α), 1+α].
StrongParams sample_strong(double alpha, Rng& rng);
Image apply_strong(const Image& image, const StrongParams& p);
Image strong(const Image& image, double alpha, Rng& rng);

// --- feature: channel dropout on every pyramid level -----------------------

struct FeaturePerturbParams {
    double drop_prob = 0.5;
    /// keep[l][n*C + c] == 1 when channel c of item n survives at level l.
    std::array<std::vector<std::uint8_t>, kPyramidLevels> keep;
};

FeaturePerturbParams sample_feature_perturb(const FeaturePyramid& pyramid, double drop_prob, Rng& rng);
/// Zeroes dropped channels and scales kept ones by 1/(1-p).
FeaturePyramid apply_feature_perturb(const FeaturePyramid& pyramid, const FeaturePerturbParams& p);
/// Gradient of apply_feature_perturb, in place.
void feature_perturb_backward(FeaturePyramid& grads, const FeaturePerturbParams& p);
FeaturePyramid feature_perturb(const FeaturePyramid& pyramid, Rng& rng, double drop_prob = 0.5);

}  // namespace cmems
