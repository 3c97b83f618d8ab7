#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cmems/rng.hpp"
#include "cmems/tensor.hpp"

namespace cmems {

inline constexpr int kPyramidLevels = 5;

/// UNet hyperparameters. Defaults are the reference backbone: encoder widths
/// {16,32,64,128,256}, encoder dropout {0.05,0.1,0.2,0.3,0.5}, decoder dropout 0.
struct UNetConfig {
    int in_channels = 1;
    int num_classes = 2;
    std::array<int, kPyramidLevels> channels{16, 32, 64, 128, 256};
    std::array<double, kPyramidLevels> dropout{0.05, 0.1, 0.2, 0.3, 0.5};
    double leaky_slope = 0.01;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    /// Scales every encoder/decoder width; base 16 gives the reference widths.
    static UNetConfig with_base_width(int num_classes, int base);
    bool operator==(const UNetConfig&) const = default;
};

/// Encoder outputs, level 0 at full resolution down to level 4 at 1/16.
struct FeaturePyramid {
    std::array<Tensor, kPyramidLevels> levels;
};

struct ConvSpec {
    int cin = 0, cout = 0, kernel = 0;
    std::size_t weight = 0, bias = 0;  // offsets into NetworkParams::weights
};

struct BatchNormSpec {
    int channels = 0;
    std::size_t gamma = 0, beta = 0;     // offsets into weights
    std::size_t mean = 0, var = 0;       // offsets into running_stats
};

struct ConvBlockSpec {
    ConvSpec conv1;
    BatchNormSpec bn1;
    double dropout = 0.0;
    ConvSpec conv2;
    BatchNormSpec bn2;
};

struct UpBlockSpec {
    ConvSpec reduce;  // 1×1
    ConvBlockSpec block;
};

/// Named contiguous block of learnable parameters.
struct ParamTensorInfo {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Offsets of every layer inside the flat parameter vector.
struct UNetLayout {
    std::array<ConvBlockSpec, kPyramidLevels> encoder;
    std::array<UpBlockSpec, kPyramidLevels - 1> decoder;
    ConvSpec head;
    std::size_t num_weights = 0;
    std::size_t num_stats = 0;
    std::vector<ParamTensorInfo> tensors;

    static UNetLayout build(const UNetConfig& cfg);
};

/// All learnable weights and batch-norm running statistics of one network.
struct NetworkParams {
    int id = 1;
    UNetConfig config;
    UNetLayout layout;
    std::vector<real> weights;
    std::vector<real> running_stats;
};

NetworkParams init_network(std::uint64_t seed, int num_classes, int id = 1);
NetworkParams init_network(std::uint64_t seed, const UNetConfig& cfg, int id = 1);

struct PassOptions {
    bool training = false;
    /// Dropout stream; required when training and any dropout rate is nonzero.
    Rng* rng = nullptr;
    /// Update batch-norm running statistics (training passes only).
    bool update_stats = true;
};

struct BatchNormCache {
    std::vector<real> mean, invstd;
};

struct ConvBlockCache {
    Tensor input;
    Tensor conv1, bn1_out;
    BatchNormCache bn1;
    std::vector<real> drop_scale;  // empty when dropout inactive
    Tensor dropped;
    Tensor conv2, bn2_out;
    BatchNormCache bn2;
};

struct EncoderCache {
    std::array<ConvBlockCache, kPyramidLevels> blocks;
    std::array<std::vector<std::int32_t>, kPyramidLevels> pool_argmax;  // index 0 unused
};

struct DecoderCache {
    std::array<Tensor, kPyramidLevels - 1> reduce_in;
    std::array<Shape4, kPyramidLevels - 1> reduced_shape;
    std::array<ConvBlockCache, kPyramidLevels - 1> blocks;
    Tensor head_in;
};

/// Throws ShapeError unless H and W are positive multiples of 16.
void require_network_input(const Tensor& x, const UNetConfig& cfg);
void require_pyramid(const FeaturePyramid& p, const UNetConfig& cfg);

/// f_m. Mutates running statistics when opts.training && opts.update_stats.
FeaturePyramid encode(NetworkParams& net, const Tensor& x, const PassOptions& opts, EncoderCache* cache = nullptr);
/// g_m. Returns logits N×K×H×W.
Tensor decode(NetworkParams& net, const FeaturePyramid& pyramid, const PassOptions& opts,
              DecoderCache* cache = nullptr);
Tensor forward(NetworkParams& net, const Tensor& x, const PassOptions& opts);
/// Eval-mode forward on a const snapshot.
Tensor forward_eval(const NetworkParams& net, const Tensor& x);
FeaturePyramid encode_eval(const NetworkParams& net, const Tensor& x);
Tensor decode_eval(const NetworkParams& net, const FeaturePyramid& pyramid);

/// Accumulates weight gradients into grad and returns dL/d(pyramid level).
FeaturePyramid decode_backward(const NetworkParams& net, const DecoderCache& cache, const Tensor& dlogits,
                               std::vector<real>& grad);
/// Accumulates weight gradients for the encoder given dL/d(each pyramid level).
void encode_backward(const NetworkParams& net, const EncoderCache& cache, FeaturePyramid dpyramid,
                     std::vector<real>& grad);

}  // namespace cmems
