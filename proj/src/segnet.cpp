#include "cmems/segnet.hpp"

#include <cmath>
#include <span>

#include "cmems/kernels.hpp"

namespace cmems {

UNetConfig UNetConfig::with_base_width(int num_classes, int base) {
    UNetConfig c;
    c.num_classes = num_classes;
    for (int l = 0; l < kPyramidLevels; ++l) c.channels[l] = base << l;
    return c;
}

namespace {

struct LayoutBuilder {
    UNetLayout& out;

    ConvSpec conv(const std::string& name, int cin, int cout, int k) {
        ConvSpec s{cin, cout, k, 0, 0};
        s.weight = add(name + ".weight", static_cast<std::size_t>(cout) * cin * k * k);
        s.bias = add(name + ".bias", static_cast<std::size_t>(cout));
        return s;
    }
    BatchNormSpec bn(const std::string& name, int c) {
        BatchNormSpec s;
        s.channels = c;
        s.gamma = add(name + ".gamma", c);
        s.beta = add(name + ".beta", c);
        s.mean = out.num_stats;
        s.var = out.num_stats + c;
        out.num_stats += 2 * static_cast<std::size_t>(c);
        return s;
    }
    ConvBlockSpec block(const std::string& name, int cin, int cout, double dropout) {
        ConvBlockSpec b;
        b.conv1 = conv(name + ".conv1", cin, cout, 3);
        b.bn1 = bn(name + ".bn1", cout);
        b.dropout = dropout;
        b.conv2 = conv(name + ".conv2", cout, cout, 3);
        b.bn2 = bn(name + ".bn2", cout);
        return b;
    }
    std::size_t add(const std::string& name, std::size_t n) {
        const std::size_t off = out.num_weights;
        out.tensors.push_back({name, off, n});
        out.num_weights += n;
        return off;
    }
};

}  // namespace

UNetLayout UNetLayout::build(const UNetConfig& cfg) {
    UNetLayout layout;
    LayoutBuilder b{layout};
    int cin = cfg.in_channels;
    for (int l = 0; l < kPyramidLevels; ++l) {
        layout.encoder[l] = b.block("enc" + std::to_string(l), cin, cfg.channels[l], cfg.dropout[l]);
        cin = cfg.channels[l];
    }
    for (int i = 0; i < kPyramidLevels - 1; ++i) {
        const int deep = cfg.channels[kPyramidLevels - 1 - i];
        const int skip = cfg.channels[kPyramidLevels - 2 - i];
        const std::string name = "dec" + std::to_string(i);
        layout.decoder[i].reduce = b.conv(name + ".reduce", deep, skip, 1);
        layout.decoder[i].block = b.block(name, 2 * skip, skip, 0.0);
    }
    layout.head = b.conv("head", cfg.channels[0], cfg.num_classes, 3);
    return layout;
}

NetworkParams init_network(std::uint64_t seed, const UNetConfig& cfg, int id) {
    if (cfg.num_classes < 2) throw std::invalid_argument("init_network: need at least 2 classes");
    NetworkParams net;
    net.id = id;
    net.config = cfg;
    net.layout = UNetLayout::build(cfg);
    net.weights.assign(net.layout.num_weights, real(0));
    net.running_stats.assign(net.layout.num_stats, real(0));

    Rng rng = Rng::stream(seed, 0x1A17, static_cast<std::uint64_t>(id));
    auto init_conv = [&](const ConvSpec& c) {
        const double std = std::sqrt(2.0 / (static_cast<double>(c.cin) * c.kernel * c.kernel));
        const std::size_t n = static_cast<std::size_t>(c.cout) * c.cin * c.kernel * c.kernel;
        for (std::size_t i = 0; i < n; ++i) net.weights[c.weight + i] = static_cast<real>(rng.normal(0.0, std));
    };
    auto init_bn = [&](const BatchNormSpec& s) {
        for (int i = 0; i < s.channels; ++i) {
            net.weights[s.gamma + i] = real(1);
            net.running_stats[s.var + i] = real(1);
        }
    };
    auto init_block = [&](const ConvBlockSpec& b) {
        init_conv(b.conv1);
        init_bn(b.bn1);
        init_conv(b.conv2);
        init_bn(b.bn2);
    };
    for (const auto& b : net.layout.encoder) init_block(b);
    for (const auto& u : net.layout.decoder) {
        init_conv(u.reduce);
        init_block(u.block);
    }
    init_conv(net.layout.head);
    return net;
}

NetworkParams init_network(std::uint64_t seed, int num_classes, int id) {
    UNetConfig cfg;
    cfg.num_classes = num_classes;
    return init_network(seed, cfg, id);
}

void require_network_input(const Tensor& x, const UNetConfig& cfg) {
    if (x.c() != cfg.in_channels || x.h() <= 0 || x.w() <= 0 || x.h() % 16 != 0 || x.w() % 16 != 0) {
        throw ShapeError("network input " + x.shape().str() + " needs " + std::to_string(cfg.in_channels) +
                         " channel(s) and H, W divisible by 16");
    }
}

void require_pyramid(const FeaturePyramid& p, const UNetConfig& cfg) {
    const Shape4& top = p.levels[0].shape();
    for (int l = 0; l < kPyramidLevels; ++l) {
        const Shape4& s = p.levels[l].shape();
        if (s.n != top.n || s.c != cfg.channels[l] || s.h * (1 << l) != top.h || s.w * (1 << l) != top.w) {
            throw ShapeError("pyramid level " + std::to_string(l) + " has shape " + s.str());
        }
    }
}

namespace {

struct Weights {
    const std::vector<real>& w;
    std::span<const real> at(std::size_t off, std::size_t n) const { return {w.data() + off, n}; }
};

std::span<const real> conv_w(const Weights& w, const ConvSpec& c) {
    return w.at(c.weight, static_cast<std::size_t>(c.cout) * c.cin * c.kernel * c.kernel);
}
std::span<const real> conv_b(const Weights& w, const ConvSpec& c) { return w.at(c.bias, c.cout); }

// stats == nullptr: no running-stat update.
Tensor batchnorm(const NetworkParams& net, const BatchNormSpec& s, const Tensor& x, bool training,
                 std::vector<real>* stats, BatchNormCache* cache) {
    const Weights w{net.weights};
    const auto gamma = w.at(s.gamma, s.channels);
    const auto beta = w.at(s.beta, s.channels);
    const real eps = static_cast<real>(net.config.bn_eps);
    Tensor y;
    if (!training) {
        kernels::batchnorm_forward_eval(x, gamma, beta, {net.running_stats.data() + s.mean, std::size_t(s.channels)},
                                        {net.running_stats.data() + s.var, std::size_t(s.channels)}, eps, y);
        return y;
    }
    std::vector<real> mean, var, invstd;
    kernels::batchnorm_forward_train(x, gamma, beta, eps, y, mean, var, invstd);
    if (stats) {
        const double m = net.config.bn_momentum;
        const double count = static_cast<double>(x.n()) * x.h() * x.w();
        const double unbias = count > 1 ? count / (count - 1) : 1.0;
        for (int c = 0; c < s.channels; ++c) {
            real& rm = (*stats)[s.mean + c];
            real& rv = (*stats)[s.var + c];
            rm = static_cast<real>((1 - m) * rm + m * mean[c]);
            rv = static_cast<real>((1 - m) * rv + m * var[c] * unbias);
        }
    }
    if (cache) {
        cache->mean = std::move(mean);
        cache->invstd = std::move(invstd);
    }
    return y;
}

// Uniform in [0,1) from the top 53 bits; cheaper than a distribution object per element.
inline double unit(Rng& rng) { return static_cast<double>(rng.next() >> 11) * 0x1.0p-53; }

Tensor conv_block(const NetworkParams& net, const ConvBlockSpec& b, const Tensor& x, const PassOptions& opts,
                  std::vector<real>* stats, ConvBlockCache* cache) {
    const Weights w{net.weights};
    const real slope = static_cast<real>(net.config.leaky_slope);

    Tensor c1;
    kernels::conv2d_forward(x, conv_w(w, b.conv1), conv_b(w, b.conv1), b.conv1.cout, 3, c1);
    Tensor y1 = batchnorm(net, b.bn1, c1, opts.training, stats, cache ? &cache->bn1 : nullptr);
    Tensor a1;
    kernels::leaky_relu_forward(y1, slope, a1);

    std::vector<real> scale;
    if (opts.training && b.dropout > 0.0) {
        if (!opts.rng) throw std::invalid_argument("training pass with dropout needs an rng");
        const double p = b.dropout;
        const real keep_scale = static_cast<real>(1.0 / (1.0 - p));
        scale.resize(a1.size());
        for (auto& s : scale) s = unit(*opts.rng) < p ? real(0) : keep_scale;
        for (std::size_t i = 0; i < a1.size(); ++i) a1[i] *= scale[i];
    }

    Tensor c2;
    kernels::conv2d_forward(a1, conv_w(w, b.conv2), conv_b(w, b.conv2), b.conv2.cout, 3, c2);
    Tensor y2 = batchnorm(net, b.bn2, c2, opts.training, stats, cache ? &cache->bn2 : nullptr);
    Tensor out;
    kernels::leaky_relu_forward(y2, slope, out);

    if (cache) {
        cache->input = x;
        cache->conv1 = std::move(c1);
        cache->bn1_out = std::move(y1);
        cache->drop_scale = std::move(scale);
        cache->dropped = std::move(a1);
        cache->conv2 = std::move(c2);
        cache->bn2_out = std::move(y2);
    }
    return out;
}

// Returns dL/d(block input).
Tensor conv_block_backward(const NetworkParams& net, const ConvBlockSpec& b, const ConvBlockCache& c,
                           const Tensor& dout, std::vector<real>& grad) {
    const Weights w{net.weights};
    const real slope = static_cast<real>(net.config.leaky_slope);
    auto gspan = [&](std::size_t off, std::size_t n) { return std::span<real>(grad.data() + off, n); };

    Tensor d;
    kernels::leaky_relu_backward(c.bn2_out, dout, slope, d);
    Tensor dc2;
    kernels::batchnorm_backward(c.conv2, d, w.at(b.bn2.gamma, b.bn2.channels), c.bn2.mean, c.bn2.invstd, dc2,
                                gspan(b.bn2.gamma, b.bn2.channels), gspan(b.bn2.beta, b.bn2.channels));
    Tensor da1;
    kernels::conv2d_backward(c.dropped, conv_w(w, b.conv2), dc2, 3, &da1,
                             gspan(b.conv2.weight, conv_w(w, b.conv2).size()), gspan(b.conv2.bias, b.conv2.cout));
    if (!c.drop_scale.empty()) {
        for (std::size_t i = 0; i < da1.size(); ++i) da1[i] *= c.drop_scale[i];
    }
    kernels::leaky_relu_backward(c.bn1_out, da1, slope, da1);
    Tensor dc1;
    kernels::batchnorm_backward(c.conv1, da1, w.at(b.bn1.gamma, b.bn1.channels), c.bn1.mean, c.bn1.invstd, dc1,
                                gspan(b.bn1.gamma, b.bn1.channels), gspan(b.bn1.beta, b.bn1.channels));
    Tensor dx;
    kernels::conv2d_backward(c.input, conv_w(w, b.conv1), dc1, 3, &dx,
                             gspan(b.conv1.weight, conv_w(w, b.conv1).size()), gspan(b.conv1.bias, b.conv1.cout));
    return dx;
}

FeaturePyramid encode_impl(const NetworkParams& net, const Tensor& x, const PassOptions& opts,
                           std::vector<real>* stats, EncoderCache* cache) {
    require_network_input(x, net.config);
    FeaturePyramid p;
    for (int l = 0; l < kPyramidLevels; ++l) {
        ConvBlockCache* bc = cache ? &cache->blocks[l] : nullptr;
        if (l == 0) {
            p.levels[0] = conv_block(net, net.layout.encoder[0], x, opts, stats, bc);
        } else {
            Tensor pooled;
            std::vector<std::int32_t> argmax;
            kernels::maxpool2_forward(p.levels[l - 1], pooled, argmax);
            if (cache) cache->pool_argmax[l] = std::move(argmax);
            p.levels[l] = conv_block(net, net.layout.encoder[l], pooled, opts, stats, bc);
        }
    }
    return p;
}

Tensor decode_impl(const NetworkParams& net, const FeaturePyramid& pyr, const PassOptions& opts,
                   std::vector<real>* stats, DecoderCache* cache) {
    require_pyramid(pyr, net.config);
    const Weights w{net.weights};
    Tensor h = pyr.levels[kPyramidLevels - 1];
    for (int i = 0; i < kPyramidLevels - 1; ++i) {
        const UpBlockSpec& up = net.layout.decoder[i];
        const Tensor& skip = pyr.levels[kPyramidLevels - 2 - i];
        Tensor reduced;
        kernels::conv2d_forward(h, conv_w(w, up.reduce), conv_b(w, up.reduce), up.reduce.cout, 1, reduced);
        Tensor upsampled;
        kernels::upsample2_forward(reduced, upsampled);
        if (cache) {
            cache->reduce_in[i] = std::move(h);
            cache->reduced_shape[i] = reduced.shape();
        }
        h = conv_block(net, up.block, concat_channels(skip, upsampled), opts, stats,
                       cache ? &cache->blocks[i] : nullptr);
    }
    Tensor logits;
    kernels::conv2d_forward(h, conv_w(w, net.layout.head), conv_b(w, net.layout.head), net.layout.head.cout, 3,
                            logits);
    if (cache) cache->head_in = std::move(h);
    return logits;
}

std::vector<real>* stats_target(NetworkParams& net, const PassOptions& opts) {
    return opts.training && opts.update_stats ? &net.running_stats : nullptr;
}

}  // namespace

FeaturePyramid encode(NetworkParams& net, const Tensor& x, const PassOptions& opts, EncoderCache* cache) {
    return encode_impl(net, x, opts, stats_target(net, opts), cache);
}

Tensor decode(NetworkParams& net, const FeaturePyramid& pyramid, const PassOptions& opts, DecoderCache* cache) {
    return decode_impl(net, pyramid, opts, stats_target(net, opts), cache);
}

Tensor forward(NetworkParams& net, const Tensor& x, const PassOptions& opts) {
    return decode(net, encode(net, x, opts), opts);
}

FeaturePyramid encode_eval(const NetworkParams& net, const Tensor& x) {
    return encode_impl(net, x, PassOptions{}, nullptr, nullptr);
}

Tensor decode_eval(const NetworkParams& net, const FeaturePyramid& pyramid) {
    return decode_impl(net, pyramid, PassOptions{}, nullptr, nullptr);
}

Tensor forward_eval(const NetworkParams& net, const Tensor& x) { return decode_eval(net, encode_eval(net, x)); }

FeaturePyramid decode_backward(const NetworkParams& net, const DecoderCache& cache, const Tensor& dlogits,
                               std::vector<real>& grad) {
    const Weights w{net.weights};
    auto gspan = [&](std::size_t off, std::size_t n) { return std::span<real>(grad.data() + off, n); };
    FeaturePyramid dp;

    const ConvSpec& head = net.layout.head;
    Tensor dh;
    kernels::conv2d_backward(cache.head_in, conv_w(w, head), dlogits, 3, &dh, gspan(head.weight, conv_w(w, head).size()),
                             gspan(head.bias, head.cout));

    for (int i = kPyramidLevels - 2; i >= 0; --i) {
        const UpBlockSpec& up = net.layout.decoder[i];
        Tensor dcat = conv_block_backward(net, up.block, cache.blocks[i], dh, grad);
        Tensor dskip, dup;
        split_channels(dcat, up.reduce.cout, dskip, dup);
        dp.levels[kPyramidLevels - 2 - i] = std::move(dskip);
        Tensor dreduced;
        kernels::upsample2_backward(dup, cache.reduced_shape[i], dreduced);
        kernels::conv2d_backward(cache.reduce_in[i], conv_w(w, up.reduce), dreduced, 1, &dh,
                                 gspan(up.reduce.weight, conv_w(w, up.reduce).size()), gspan(up.reduce.bias, up.reduce.cout));
    }
    dp.levels[kPyramidLevels - 1] = std::move(dh);
    return dp;
}

void encode_backward(const NetworkParams& net, const EncoderCache& cache, FeaturePyramid dp, std::vector<real>& grad) {
    for (int l = kPyramidLevels - 1; l >= 0; --l) {
        Tensor dx = conv_block_backward(net, net.layout.encoder[l], cache.blocks[l], dp.levels[l], grad);
        if (l == 0) break;
        Tensor dprev;
        kernels::maxpool2_backward(dx, cache.pool_argmax[l], dp.levels[l - 1].shape(), dprev);
        Tensor& acc = dp.levels[l - 1];
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += dprev[i];
    }
}

}  // namespace cmems
