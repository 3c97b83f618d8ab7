#include "cmems/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cmems/objective.hpp"

namespace cmems {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same(const BinaryVolume& a, const BinaryVolume& b) {
    if (a.depth != b.depth || a.height != b.height || a.width != b.width)
        throw ShapeError("metric volumes differ in shape");
}

// Felzenszwalb & Huttenlocher 1D squared distance transform of f (length n, stride s).
void edt_1d(double* f, int n, std::size_t s, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    int k = 0;
    int first = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q * s] < kInf) {
            first = q;
            break;
        }
    }
    if (first < 0) return;
    v[0] = first;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = first + 1; q < n; ++q) {
        const double fq = f[q * s];
        if (fq == kInf) continue;
        double sq;
        while (true) {
            const int p = v[k];
            sq = ((fq + double(q) * q) - (f[p * s] + double(p) * p)) / (2.0 * q - 2.0 * p);
            if (sq <= z[k] && k > 0) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = sq;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k] * s];
    }
    for (int q = 0; q < n; ++q) f[q * s] = d[q];
}

}  // namespace

std::size_t BinaryVolume::count() const {
    return static_cast<std::size_t>(std::count(voxels.begin(), voxels.end(), std::uint8_t{1}));
}

BinaryVolume class_volume(const std::vector<LabelMask>& slices, int k) {
    BinaryVolume v;
    v.depth = static_cast<int>(slices.size());
    if (slices.empty()) return v;
    v.height = slices[0].height();
    v.width = slices[0].width();
    v.voxels.reserve(static_cast<std::size_t>(v.depth) * v.height * v.width);
    for (const auto& s : slices) {
        if (s.height() != v.height || s.width() != v.width) throw ShapeError("slices differ in shape");
        for (auto c : s.classes()) v.voxels.push_back(c == k ? 1 : 0);
    }
    return v;
}

double dsc(const BinaryVolume& a, const BinaryVolume& b) {
    require_same(a, b);
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a.voxels[i];
        nb += b.voxels[i];
        inter += a.voxels[i] & b.voxels[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

BinaryVolume surface(const BinaryVolume& v) {
    BinaryVolume out = v;
    const int D = v.depth, H = v.height, W = v.width;
    auto at = [&](int z, int y, int x) -> std::uint8_t {
        if (z < 0 || y < 0 || x < 0 || z >= D || y >= H || x >= W) return 0;
        return v.voxels[(static_cast<std::size_t>(z) * H + y) * W + x];
    };
    for (int z = 0; z < D; ++z) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const std::size_t i = (static_cast<std::size_t>(z) * H + y) * W + x;
                if (!v.voxels[i]) continue;
                const bool interior = (D == 1 || (at(z - 1, y, x) && at(z + 1, y, x))) && at(z, y - 1, x) &&
                                      at(z, y + 1, x) && at(z, y, x - 1) && at(z, y, x + 1);
                out.voxels[i] = interior ? 0 : 1;
            }
        }
    }
    return out;
}

std::vector<double> distance_to(const BinaryVolume& v) {
    const int D = v.depth, H = v.height, W = v.width;
    std::vector<double> f(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) f[i] = v.voxels[i] ? 0.0 : kInf;
    const int n = std::max({D, H, W, 1});
    std::vector<double> d(n);
    std::vector<int> idx(n);
    std::vector<double> z(n + 1);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int zz = 0; zz < D; ++zz)
        for (int y = 0; y < H; ++y) edt_1d(&f[zz * plane + static_cast<std::size_t>(y) * W], W, 1, d, idx, z);
    for (int zz = 0; zz < D; ++zz)
        for (int x = 0; x < W; ++x) edt_1d(&f[zz * plane + x], H, W, d, idx, z);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) edt_1d(&f[static_cast<std::size_t>(y) * W + x], D, plane, d, idx, z);
    for (auto& x : f) x = std::sqrt(x);
    return f;
}

double percentile(std::vector<double>& values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::optional<double> hd95(const BinaryVolume& a, const BinaryVolume& b) {
    require_same(a, b);
    if (a.count() == 0 || b.count() == 0) return std::nullopt;
    const BinaryVolume sa = surface(a), sb = surface(b);
    const auto da = distance_to(sa), db = distance_to(sb);
    std::vector<double> ab, ba;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa.voxels[i]) ab.push_back(db[i]);
        if (sb.voxels[i]) ba.push_back(da[i]);
    }
    return std::max(percentile(ab, 95.0), percentile(ba, 95.0));
}

double dsc(const LabelMask& pred, const LabelMask& gt, int k) {
    return dsc(std::vector<LabelMask>{pred}, std::vector<LabelMask>{gt}, k);
}
std::optional<double> hd95(const LabelMask& pred, const LabelMask& gt, int k) {
    return hd95(std::vector<LabelMask>{pred}, std::vector<LabelMask>{gt}, k);
}

double dsc(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& gt, int k) {
    if (pred.size() != gt.size()) throw ShapeError("prediction and ground truth differ in slice count");
    return dsc(class_volume(pred, k), class_volume(gt, k));
}

std::optional<double> hd95(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& gt, int k) {
    if (pred.size() != gt.size()) throw ShapeError("prediction and ground truth differ in slice count");
    return hd95(class_volume(pred, k), class_volume(gt, k));
}

VolumeResult evaluate_masks(const std::string& id, const std::vector<LabelMask>& pred,
                            const std::vector<LabelMask>& gt) {
    if (pred.size() != gt.size() || gt.empty()) throw ShapeError("prediction and ground truth differ in slice count");
    VolumeResult r;
    r.id = id;
    const int K = gt[0].num_classes();
    for (int k = 1; k < K; ++k) {
        const auto pv = class_volume(pred, k), gv = class_volume(gt, k);
        r.dsc.push_back(dsc(pv, gv));
        r.hd95.push_back(hd95(pv, gv));
    }
    return r;
}

LabelMask predict_slice(const std::array<NetworkParams, 2>& nets, const Image& slice, NetworkSelector which) {
    const Tensor x = to_tensor(slice);
    ProbMap p;
    switch (which) {
        case NetworkSelector::First: p = softmax_probs(forward_eval(nets[0], x)); break;
        case NetworkSelector::Second: p = softmax_probs(forward_eval(nets[1], x)); break;
        case NetworkSelector::Average: {
            p = softmax_probs(forward_eval(nets[0], x));
            const ProbMap q = softmax_probs(forward_eval(nets[1], x));
            auto ps = p.probs.span();
            auto qs = q.probs.span();
            for (std::size_t i = 0; i < ps.size(); ++i) ps[i] = (ps[i] + qs[i]) / 2;
            break;
        }
    }
    const PseudoLabel pl = pseudo_label(p, 0.5);
    return LabelMask(slice.height(), slice.width(), nets[0].config.num_classes, pl.classes);
}

std::vector<LabelMask> predict_volume(const std::array<NetworkParams, 2>& nets, const std::vector<Image>& slices,
                                      NetworkSelector which) {
    std::vector<LabelMask> out;
    out.reserve(slices.size());
    for (const auto& s : slices) {
        if (!out.empty() && (s.height() != slices[0].height() || s.width() != slices[0].width()))
            throw ShapeError("volume slices differ in shape");
        out.push_back(predict_slice(nets, s, which));
    }
    return out;
}

VolumeResult evaluate_volume(const std::array<NetworkParams, 2>& nets, const TestVolume& volume,
                             NetworkSelector which) {
    if (volume.slices.size() != volume.labels.size())
        throw ShapeError("volume " + volume.id + ": slice and label counts differ");
    return evaluate_masks(volume.id, predict_volume(nets, volume.slices, which), volume.labels);
}

std::vector<VolumeResult> evaluate_all(const std::array<NetworkParams, 2>& nets,
                                       const std::vector<TestVolume>& volumes, NetworkSelector which) {
    std::vector<VolumeResult> out(volumes.size());
    for (std::size_t i = 0; i < volumes.size(); ++i) out[i] = evaluate_volume(nets, volumes[i], which);
    return out;
}

Report report(const std::vector<VolumeResult>& results, const std::vector<std::string>& class_names) {
    Report r;
    r.cases = results.size();
    if (results.empty()) return r;
    const std::size_t C = results[0].dsc.size();
    for (std::size_t c = 0; c < C; ++c) {
        r.class_names.push_back(c + 1 < class_names.size() ? class_names[c + 1] : "class" + std::to_string(c + 1));
        double s = 0, h = 0;
        std::size_t nh = 0;
        for (const auto& v : results) {
            if (v.dsc.size() != C) throw ShapeError("cases differ in class count");
            s += v.dsc[c];
            if (v.hd95[c]) {
                h += *v.hd95[c];
                ++nh;
            }
        }
        r.dsc.push_back(s / static_cast<double>(results.size()));
        r.hd95.push_back(nh ? std::optional<double>(h / static_cast<double>(nh)) : std::nullopt);
    }
    double s = 0, h = 0;
    std::size_t nh = 0;
    for (std::size_t c = 0; c < C; ++c) {
        s += r.dsc[c];
        if (r.hd95[c]) {
            h += *r.hd95[c];
            ++nh;
        }
    }
    r.dsc_avg = C ? s / static_cast<double>(C) : 0.0;
    if (nh) r.hd95_avg = h / static_cast<double>(nh);
    return r;
}

nlohmann::json to_json(const Report& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t c = 0; c < r.dsc.size(); ++c) per[r.class_names[c]] = {{"dsc", r.dsc[c]}, {"hd95", opt(r.hd95[c])}};
    return {{"dsc_avg", r.dsc_avg}, {"hd95_avg", opt(r.hd95_avg)}, {"per_class", per}, {"cases", r.cases}};
}

std::string format_table(const Report& r) {
    std::ostringstream os;
    os << std::fixed;
    auto cell = [&](const std::optional<double>& v, int prec) {
        std::ostringstream c;
        c << std::fixed << std::setprecision(prec);
        if (v) c << *v; else c << "n/a";
        return c.str();
    };
    std::size_t w = 7;
    for (const auto& n : r.class_names) w = std::max(w, n.size());
    os << std::left << std::setw(static_cast<int>(w) + 2) << "class" << std::right << std::setw(8) << "DSC"
       << std::setw(10) << "HD95" << "\n";
    os << std::left << std::setw(static_cast<int>(w) + 2) << "average" << std::right << std::setw(8)
       << cell(r.dsc_avg, 3) << std::setw(10) << cell(r.hd95_avg, 2) << "\n";
    for (std::size_t c = 0; c < r.dsc.size(); ++c)
        os << std::left << std::setw(static_cast<int>(w) + 2) << r.class_names[c] << std::right << std::setw(8)
           << cell(r.dsc[c], 3) << std::setw(10) << cell(r.hd95[c], 2) << "\n";
    return os.str();
}

}  // namespace cmems
