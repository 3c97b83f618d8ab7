#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmems/config.hpp"
#include "cmems/datamodel.hpp"
#include "cmems/segnet.hpp"

namespace cmems {

/// Binary D×H×W volume, row-major with depth outermost.
struct BinaryVolume {
    int depth = 0, height = 0, width = 0;
    std::vector<std::uint8_t> voxels;

    std::size_t size() const { return voxels.size(); }
    std::size_t count() const;
};

/// Stacks 2D masks into the class-k indicator volume. Throws ShapeError on mismatch.
BinaryVolume class_volume(const std::vector<LabelMask>& slices, int k);

/// 2|A∩B| / (|A|+|B|); 1 when both are empty.
double dsc(const BinaryVolume& a, const BinaryVolume& b);
/// Symmetric 95th-percentile surface distance (unit spacing, 6-connected
/// surfaces, linear percentile interpolation). nullopt when either side is empty.
std::optional<double> hd95(const BinaryVolume& a, const BinaryVolume& b);

double dsc(const LabelMask& pred, const LabelMask& gt, int k);
std::optional<double> hd95(const LabelMask& pred, const LabelMask& gt, int k);
double dsc(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& gt, int k);
std::optional<double> hd95(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& gt, int k);

/// Surface voxels: the mask minus its 6-connected erosion; the volume border erodes.
/// A single-slice volume is treated as 2D (4-connected, no depth neighbours).
BinaryVolume surface(const BinaryVolume& v);
/// Exact Euclidean distance from every voxel to the nearest set voxel of `v`
/// (infinity when v is empty).
std::vector<double> distance_to(const BinaryVolume& v);
/// numpy-style linear-interpolated percentile, q in [0,100]. Sorts `values`.
double percentile(std::vector<double>& values, double q);

/// Metrics for the foreground classes 1..K-1 of one case.
struct VolumeResult {
    std::string id;
    std::vector<double> dsc;
    std::vector<std::optional<double>> hd95;
};

VolumeResult evaluate_masks(const std::string& id, const std::vector<LabelMask>& pred,
                            const std::vector<LabelMask>& gt);

/// Slice-wise eval-mode inference, argmax of the softmax. Averaging mode
/// averages the two networks' probabilities.
LabelMask predict_slice(const std::array<NetworkParams, 2>& nets, const Image& slice, NetworkSelector which);
std::vector<LabelMask> predict_volume(const std::array<NetworkParams, 2>& nets, const std::vector<Image>& slices,
                                      NetworkSelector which);
VolumeResult evaluate_volume(const std::array<NetworkParams, 2>& nets, const TestVolume& volume,
                             NetworkSelector which);

struct Report {
    std::vector<std::string> class_names;  // foreground classes
    std::vector<double> dsc;
    std::vector<std::optional<double>> hd95;
    double dsc_avg = 0;
    std::optional<double> hd95_avg;
    std::size_t cases = 0;
};

/// Per-class mean over cases (undefined HD95 skipped), then the class average.
/// `class_names` lists all K classes, background first.
Report report(const std::vector<VolumeResult>& results, const std::vector<std::string>& class_names = {});
std::vector<VolumeResult> evaluate_all(const std::array<NetworkParams, 2>& nets,
                                       const std::vector<TestVolume>& volumes, NetworkSelector which);

/// {dsc_avg, hd95_avg, per_class: {name: {dsc, hd95}}}; undefined HD95 is null.
nlohmann::json to_json(const Report& r);
std::string format_table(const Report& r);

}  // namespace cmems
